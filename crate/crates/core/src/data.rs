//! Synthetic election generation, labelling and dataset files.
//!
//! JSONL datasets hold one election per line:
//! `{"n":3,"m":2,"utilities":[[..],[..],[..]],"label":1}` where `label` is a
//! zero-based candidate index or `null`. Utility CSV files have no header,
//! one voter per row and one candidate per column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::election::{
    welfare_winner, Election, PreferenceProfile, RankingProfile, UtilityProfile, WelfareKind,
};
use crate::models::InputKind;
use crate::rules::RuleKind;
use crate::{Error, Result};

/// Where utility matrices come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    /// Each voter row is a flat Dirichlet draw.
    Dirichlet,
    /// Voters and candidates uniform in the unit cube; `U_ij = 1 - dist`.
    Spatial,
    /// Voter and candidate subsets of a utility CSV.
    File { path: PathBuf },
}

/// How each election is labelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum LabelSpec {
    Rule(RuleKind),
    Welfare(WelfareKind),
    None,
}

impl std::str::FromStr for LabelSpec {
    type Err = Error;

    /// Parses `rule:NAME`, `welfare:KIND` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("rule", name)) => Ok(LabelSpec::Rule(name.parse()?)),
            Some(("welfare", kind)) => Ok(LabelSpec::Welfare(kind.parse()?)),
            None if s == "none" => Ok(LabelSpec::None),
            _ => Err(Error::invalid(format!(
                "label must be rule:NAME, welfare:KIND or none, got '{s}'"
            ))),
        }
    }
}

impl std::fmt::Display for LabelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelSpec::Rule(r) => write!(f, "rule:{r}"),
            LabelSpec::Welfare(k) => write!(f, "welfare:{k}"),
            LabelSpec::None => f.write_str("none"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: Source,
    /// Inclusive voter-count range.
    pub n_range: (usize, usize),
    /// Inclusive candidate-count range.
    pub m_range: (usize, usize),
    pub count: usize,
    pub seed: u64,
    pub label: LabelSpec,
}

impl DatasetSpec {
    /// 20,000 elections with 3–10 voters and 2–5 candidates.
    pub fn train(source: Source, label: LabelSpec, seed: u64) -> Self {
        DatasetSpec {
            source,
            n_range: (3, 10),
            m_range: (2, 5),
            count: 20_000,
            seed,
            label,
        }
    }

    /// 512 elections with 15 voters and 6 candidates.
    pub fn validation(source: Source, label: LabelSpec, seed: u64) -> Self {
        DatasetSpec {
            source,
            n_range: (15, 15),
            m_range: (6, 6),
            count: 512,
            seed,
            label,
        }
    }

    /// 512 elections with 20 voters and 8 candidates.
    pub fn test(source: Source, label: LabelSpec, seed: u64) -> Self {
        DatasetSpec {
            source,
            n_range: (20, 20),
            m_range: (8, 8),
            count: 512,
            seed,
            label,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_ranges(mut self, n: (usize, usize), m: (usize, usize)) -> Self {
        self.n_range = n;
        self.m_range = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n0, n1) = self.n_range;
        let (m0, m1) = self.m_range;
        if n0 == 0 || m0 == 0 || n0 > n1 || m0 > m1 {
            return Err(Error::invalid(format!(
                "ranges must be nonempty and start at 1 or more: n {:?}, m {:?}",
                self.n_range, self.m_range
            )));
        }
        if self.count == 0 {
            return Err(Error::invalid("dataset count must be at least 1"));
        }
        Ok(())
    }
}

/// An election with its (optional) winner label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledElection {
    pub election: Election,
    pub label: Option<usize>,
}

impl LabeledElection {
    pub fn utilities(&self) -> &UtilityProfile {
        self.election.utilities()
    }

    pub fn n(&self) -> usize {
        self.election.n()
    }

    pub fn m(&self) -> usize {
        self.election.m()
    }

    /// Strict rankings induced by the utilities.
    pub fn ranking(&self) -> RankingProfile {
        RankingProfile::from_utilities(self.utilities()).expect("finite utilities")
    }

    /// Ballots a truthful electorate reports under `input`.
    pub fn ballots(&self, input: InputKind) -> PreferenceProfile {
        match input {
            InputKind::Utility => PreferenceProfile::from_utilities(self.utilities()),
            InputKind::Ranking => PreferenceProfile::from_ranking(&self.ranking()),
        }
    }
}

pub fn gen_dirichlet(n: usize, m: usize, rng: &mut impl Rng) -> UtilityProfile {
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        let row: Vec<f64> = (0..m)
            .map(|_| {
                let x: f64 = Exp1.sample(rng);
                x.max(f64::MIN_POSITIVE)
            })
            .collect();
        let total: f64 = row.iter().sum();
        data.extend(row.iter().map(|x| x / total));
    }
    UtilityProfile::new(n, m, data).expect("finite simplex rows")
}

pub fn gen_spatial(n: usize, m: usize, rng: &mut impl Rng) -> UtilityProfile {
    let voters: Vec<[f64; 3]> = (0..n).map(|_| rng.random()).collect();
    let cands: Vec<[f64; 3]> = (0..m).map(|_| rng.random()).collect();
    let mut data = Vec::with_capacity(n * m);
    for v in &voters {
        for c in &cands {
            let d2: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            data.push(1.0 - d2.sqrt());
        }
    }
    UtilityProfile::new(n, m, data).expect("finite distances")
}

/// Winner label of `u` under `label`, ties to the lowest index.
pub fn label_for(u: &UtilityProfile, label: LabelSpec) -> Result<Option<usize>> {
    Ok(match label {
        LabelSpec::Rule(rule) => Some(rule.apply(&RankingProfile::from_utilities(u)?).winner),
        LabelSpec::Welfare(kind) => Some(welfare_winner(u, kind)),
        LabelSpec::None => None,
    })
}

/// Generates and labels `spec.count` elections. Element `k` draws from its
/// own stream of the seeded generator, so each element depends only on
/// `(spec, k)`.
pub fn label_dataset(spec: &DatasetSpec) -> Result<Vec<LabeledElection>> {
    spec.validate()?;
    let pool = match &spec.source {
        Source::File { path } => {
            let u = read_utility_csv(path)?;
            if spec.n_range.1 > u.n() || spec.m_range.1 > u.m() {
                return Err(Error::invalid(format!(
                    "{} holds {}x{} utilities, cannot sample up to {} voters and {} candidates",
                    path.display(),
                    u.n(),
                    u.m(),
                    spec.n_range.1,
                    spec.m_range.1
                )));
            }
            Some(u)
        }
        _ => None,
    };
    (0..spec.count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let n = rng.random_range(spec.n_range.0..=spec.n_range.1);
            let m = rng.random_range(spec.m_range.0..=spec.m_range.1);
            let u = match (&spec.source, &pool) {
                (Source::Dirichlet, _) => gen_dirichlet(n, m, &mut rng),
                (Source::Spatial, _) => gen_spatial(n, m, &mut rng),
                (Source::File { .. }, Some(pool)) => {
                    let mut voters = sample(&mut rng, pool.n(), n).into_vec();
                    let mut cands = sample(&mut rng, pool.m(), m).into_vec();
                    voters.sort_unstable();
                    cands.sort_unstable();
                    let data = voters
                        .iter()
                        .flat_map(|&i| cands.iter().map(move |&j| pool.get(i, j)))
                        .collect();
                    UtilityProfile::new(n, m, data)?
                }
                (Source::File { .. }, None) => unreachable!("pool loaded for file sources"),
            };
            let label = label_for(&u, spec.label)?;
            Ok(LabeledElection {
                election: Election::new(u),
                label,
            })
        })
        .collect()
}

/// Reads a headerless CSV of utilities, one voter per row.
pub fn read_utility_csv(path: &Path) -> Result<UtilityProfile> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(k + 1, e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(k + 1, format!("column {}: '{field}' is not a finite number", c + 1))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    k + 1,
                    format!("row {} has {} entries, expected {}", k + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no utility rows".into()));
    }
    UtilityProfile::from_rows(rows).map_err(|e| parse_err(1, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct JsonElection {
    n: usize,
    m: usize,
    utilities: Vec<Vec<f64>>,
    label: Option<usize>,
}

pub fn write_jsonl(dataset: &[LabeledElection], path: &Path) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for e in dataset {
        let line = JsonElection {
            n: e.n(),
            m: e.m(),
            utilities: e.utilities().to_rows(),
            label: e.label,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")
            .map_err(|err| Error::io(format!("writing {}", path.display()), err))?;
    }
    w.flush()
        .map_err(|err| Error::io(format!("writing {}", path.display()), err))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledElection>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonElection =
            serde_json::from_str(&line).map_err(|e| parse_err(k + 1, e.to_string()))?;
        if rec.utilities.len() != rec.n {
            return Err(parse_err(
                k + 1,
                format!("n = {} but utilities has {} rows", rec.n, rec.utilities.len()),
            ));
        }
        if let Some(bad) = rec.utilities.iter().position(|r| r.len() != rec.m) {
            return Err(parse_err(
                k + 1,
                format!("m = {} but utilities row {} has {} entries", rec.m, bad + 1, rec.utilities[bad].len()),
            ));
        }
        if let Some(l) = rec.label {
            if l >= rec.m {
                return Err(parse_err(k + 1, format!("label {l} out of range for m = {}", rec.m)));
            }
        }
        let u = UtilityProfile::from_rows(rec.utilities).map_err(|e| parse_err(k + 1, e.to_string()))?;
        out.push(LabeledElection {
            election: Election::new(u),
            label: rec.label,
        });
    }
    if out.is_empty() {
        return Err(parse_err(1, "dataset holds no elections".into()));
    }
    Ok(out)
}
