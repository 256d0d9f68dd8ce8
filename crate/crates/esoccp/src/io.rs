//! File formats: problem, scenario model, portfolio returns, matrices, and the
//! run manifest. Matrices in JSON are arrays of rows.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::esoclcp::EsocLcpInstance;
use crate::portfolio::PortfolioInstance;
use crate::stochastic::{Perturbation, ScenarioModel, Target};

/// `{k, l, A, B, C, D, p, q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub k: usize,
    pub l: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Dimension(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn to_instance(&self) -> Result<EsocLcpInstance> {
        let (k, l) = (self.k, self.l);
        let shape = |m: &DMatrix<f64>, r: usize, c: usize, what: &str| {
            if m.shape() == (r, c) || (m.is_empty() && r * c == 0) {
                Ok(())
            } else {
                Err(Error::Dimension(format!("{what} is {:?}, expected ({r}, {c})", m.shape())))
            }
        };
        let a = matrix_from_rows(&self.a, "A")?;
        let b = matrix_from_rows(&self.b, "B")?;
        let c = matrix_from_rows(&self.c, "C")?;
        let d = matrix_from_rows(&self.d, "D")?;
        shape(&a, k, k, "A")?;
        shape(&b, k, l, "B")?;
        shape(&c, l, k, "C")?;
        shape(&d, l, l, "D")?;
        EsocLcpInstance::new(a, b, c, d, DVector::from_vec(self.p.clone()), DVector::from_vec(self.q.clone()))
    }

    pub fn from_instance(inst: &EsocLcpInstance) -> Self {
        ProblemFile {
            k: inst.k,
            l: inst.l,
            a: matrix_to_rows(&inst.a),
            b: matrix_to_rows(&inst.b),
            c: matrix_to_rows(&inst.c),
            d: matrix_to_rows(&inst.d),
            p: inst.p.iter().copied().collect(),
            q: inst.q.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationFile {
    pub target: String,
    #[serde(default = "normal")]
    pub dist: String,
    #[serde(default)]
    pub mean: f64,
    pub sd: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn normal() -> String {
    "normal".into()
}

fn one() -> f64 {
    1.0
}

/// `{base: <problem>, perturbations: [...], seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub base: ProblemFile,
    pub perturbations: Vec<PerturbationFile>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn to_model(&self) -> Result<ScenarioModel> {
        let base = self.base.to_instance()?;
        let perts = self
            .perturbations
            .iter()
            .map(|p| {
                if p.dist != "normal" {
                    return Err(Error::InvalidInput(format!("unsupported distribution {:?}", p.dist)));
                }
                Ok(Perturbation { target: Target::parse(&p.target)?, mean: p.mean, sd: p.sd, scale: p.scale })
            })
            .collect::<Result<Vec<_>>>()?;
        ScenarioModel::new(base, perts, self.seed)
    }

    pub fn from_model(model: &ScenarioModel) -> Self {
        ScenarioFile {
            base: ProblemFile::from_instance(&model.base),
            perturbations: model
                .perturbations
                .iter()
                .map(|p| PerturbationFile {
                    target: p.target.label(),
                    dist: normal(),
                    mean: p.mean,
                    sd: p.sd,
                    scale: p.scale,
                })
                .collect(),
            seed: model.seed,
        }
    }
}

/// JSON returns: `R` has one row per scenario and one column per asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioFile {
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
}

/// Reads `scenario,prob,asset1..assetN`, one row per scenario. Returns the
/// assets-by-scenarios matrix and the probabilities.
pub fn parse_returns_csv(text: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    if header.len() < 4 || &header[0] != "scenario" || &header[1] != "prob" {
        return Err(Error::InvalidInput("header must be scenario,prob,asset1,...,assetN with N >= 2".into()));
    }
    let n = header.len() - 2;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut f = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != n + 2 {
            return Err(Error::Dimension(format!("row has {} fields, expected {}", rec.len(), n + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")));
        f.push(num(&rec[1])?);
        cols.push((0..n).map(|i| num(&rec[i + 2])).collect::<Result<_>>()?);
    }
    if cols.is_empty() {
        return Err(Error::InvalidInput("no scenarios".into()));
    }
    let t = cols.len();
    Ok((DMatrix::from_fn(n, t, |i, j| cols[j][i]), DVector::from_vec(f)))
}

pub fn returns_csv(inst: &PortfolioInstance) -> String {
    let mut s = String::from("scenario,prob");
    for i in 1..=inst.n() {
        s.push_str(&format!(",asset{i}"));
    }
    s.push('\n');
    for j in 0..inst.t() {
        s.push_str(&format!("{},{}", j + 1, inst.f[j]));
        for i in 0..inst.n() {
            s.push_str(&format!(",{}", inst.returns[(i, j)]));
        }
        s.push('\n');
    }
    s
}

/// Portfolio from CSV or JSON; `c0` from the flag wins over the file.
pub fn parse_portfolio(text: &str, c0: Option<f64>) -> Result<PortfolioInstance> {
    let trimmed = text.trim_start();
    let (returns, f, file_c0) = if trimmed.starts_with('{') {
        let pf: PortfolioFile = serde_json::from_str(text)?;
        let rows = matrix_from_rows(&pf.r, "R")?;
        (rows.transpose(), DVector::from_vec(pf.f), pf.c0)
    } else {
        let (r, f) = parse_returns_csv(text)?;
        (r, f, None)
    };
    let c0 = c0.or(file_c0).ok_or_else(|| Error::InvalidInput("c0 missing (flag or file)".into()))?;
    PortfolioInstance::new(returns, f, c0)
}

/// Square matrix from JSON (`[[..], ..]` or `{"A": [[..], ..]}`) or
/// whitespace-separated text, one row per line.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let trimmed = text.trim_start();
    let rows: Vec<Vec<f64>> = if trimmed.starts_with('[') {
        serde_json::from_str(text)?
    } else if trimmed.starts_with('{') {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wrapped {
            #[serde(rename = "A")]
            a: Vec<Vec<f64>>,
        }
        serde_json::from_str::<Wrapped>(text)?.a
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {t:?}"))))
                    .collect()
            })
            .collect::<Result<_>>()?
    };
    let m = matrix_from_rows(&rows, "matrix")?;
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("matrix must be square and nonempty, got {:?}", m.shape())));
    }
    Ok(m)
}

pub fn read_text(path: &Path) -> Result<(String, InputDigest)> {
    let bytes = std::fs::read(path)?;
    let digest = InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) };
    let text = String::from_utf8(bytes).map_err(|_| Error::InvalidInput(format!("{} is not UTF-8", path.display())))?;
    Ok((text, digest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything that determines a run's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub version: String,
    /// Only present with `--timings`, so that plain runs are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<InputDigest>, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            inputs,
            seed,
            config,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_s: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esoclcp::demo_instance;

    #[test]
    fn problem_roundtrip() {
        let inst = demo_instance();
        let pf = ProblemFile::from_instance(&inst);
        let text = serde_json::to_string(&pf).unwrap();
        let back: ProblemFile = serde_json::from_str(&text).unwrap();
        let inst2 = back.to_instance().unwrap();
        assert_eq!(inst.t(), inst2.t());
        assert_eq!(inst.r(), inst2.r());
    }

    #[test]
    fn scenario_roundtrip() {
        let m = ScenarioModel::demo(7);
        let sf = ScenarioFile::from_model(&m);
        let back: ScenarioFile = serde_json::from_str(&serde_json::to_string(&sf).unwrap()).unwrap();
        let m2 = back.to_model().unwrap();
        assert_eq!(m2.seed, 7);
        assert_eq!(m2.perturbations, m.perturbations);
    }

    #[test]
    fn returns_csv_roundtrip() {
        let inst = PortfolioInstance::example_item_iii();
        let back = parse_portfolio(&returns_csv(&inst), Some(4.0)).unwrap();
        assert_eq!(back.returns, inst.returns);
        assert_eq!(back.f, inst.f);
    }

    #[test]
    fn matrix_formats() {
        let a = parse_matrix("[[1, 2], [2, 3]]").unwrap();
        let b = parse_matrix("{\"A\": [[1, 2], [2, 3]]}").unwrap();
        let c = parse_matrix("# comment\n1 2\n2 3\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(parse_matrix("1 2 3\n4 5 6").is_err());
        assert!(parse_matrix("1 x\n2 3").is_err());
    }

    #[test]
    fn bad_shapes_rejected() {
        let mut pf = ProblemFile::from_instance(&demo_instance());
        pf.b.pop();
        assert!(pf.to_instance().is_err());
        assert!(parse_returns_csv("scenario,prob,asset1\n1,1,0.5\n").is_err());
    }
}
