//! Per-year gender comparisons of construct rates: 2×2 tables, odds ratios,
//! Pearson chi-square tests and Bonferroni flags.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Gender, GenderPrediction, HbmConstruct, LabeledTweet, TpbAttitude};
use crate::error::{Error, Result};
use crate::io;

/// The five per-year tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    Susceptibility,
    Severity,
    Benefits,
    Barriers,
    TpbPositive,
}

impl Construct {
    pub const ALL: [Construct; 5] = [
        Construct::Susceptibility,
        Construct::Severity,
        Construct::Benefits,
        Construct::Barriers,
        Construct::TpbPositive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Construct::Susceptibility => "susceptibility",
            Construct::Severity => "severity",
            Construct::Benefits => "benefits",
            Construct::Barriers => "barriers",
            Construct::TpbPositive => "tpb_positive",
        }
    }

    fn hbm(self) -> Option<HbmConstruct> {
        match self {
            Construct::Susceptibility => Some(HbmConstruct::Susceptibility),
            Construct::Severity => Some(HbmConstruct::Severity),
            Construct::Benefits => Some(HbmConstruct::Benefits),
            Construct::Barriers => Some(HbmConstruct::Barriers),
            Construct::TpbPositive => None,
        }
    }

    /// Whether the tweet carries this construct.
    pub fn holds(self, t: &LabeledTweet) -> bool {
        match self.hbm() {
            Some(h) => t.hbm.contains(&h),
            None => t.tpb == Some(TpbAttitude::Positive),
        }
    }

    /// Whether the tweet has any label of this construct's model (HBM or TPB).
    fn in_family(self, t: &LabeledTweet) -> bool {
        match self.hbm() {
            Some(_) => !t.hbm.is_empty(),
            None => t.tpb.is_some(),
        }
    }
}

impl fmt::Display for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Construct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Construct::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown construct {s:?}")))
    }
}

/// Which tweets form the "not in construct" cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Every tweet of the year.
    #[default]
    All,
    /// Only tweets labeled under the same model (any HBM construct for HBM
    /// tests, any attitude for the TPB test).
    Labeled,
}

impl FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Denominator::All),
            "labeled" => Ok(Denominator::Labeled),
            _ => Err(Error::InvalidArgument(format!("denominator must be all or labeled, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub comparisons: usize,
    /// Add 0.5 to every cell of a table with a zero cell before the odds ratio.
    pub haldane: bool,
    pub yates: bool,
    pub denominator: Denominator,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.05,
            comparisons: 25,
            haldane: true,
            yates: false,
            denominator: Denominator::All,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.comparisons == 0 {
            return Err(Error::InvalidArgument("comparisons must be at least 1".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.alpha / self.comparisons as f64
    }
}

/// Counts with a = male in construct, b = male not, c = female in, d = female not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Table2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Table2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Table2x2 { a, b, c, d }
    }

    pub fn swap_genders(self) -> Self {
        Table2x2::new(self.c, self.d, self.a, self.b)
    }

    pub fn transpose(self) -> Self {
        Table2x2::new(self.a, self.c, self.b, self.d)
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// (a·d)/(b·c). With `haldane`, a table containing a zero cell gets 0.5
/// added to every cell first; without it the result may be 0, infinite or NaN.
pub fn odds_ratio(t: &Table2x2, haldane: bool) -> f64 {
    let (num, den) = odds_ratio_fraction(t, haldane);
    num / den
}

/// Numerator a·d and denominator b·c of the odds ratio, after the optional
/// zero-cell correction.
pub fn odds_ratio_fraction(t: &Table2x2, haldane: bool) -> (f64, f64) {
    let cells = [t.a, t.b, t.c, t.d].map(|x| x as f64);
    let [a, b, c, d] = if haldane && cells.contains(&0.0) {
        cells.map(|x| x + 0.5)
    } else {
        cells
    };
    (a * d, b * c)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_sf_df1(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        libm::erfc((x / 2.0).sqrt())
    }
}

/// Pearson chi-square statistic and p-value (df = 1). Fails when a row or
/// column margin is zero.
pub fn chi2_test(t: &Table2x2, yates: bool) -> Result<(f64, f64)> {
    let obs = [t.a, t.b, t.c, t.d].map(|x| x as f64);
    let rows = [obs[0] + obs[1], obs[2] + obs[3]];
    let cols = [obs[0] + obs[2], obs[1] + obs[3]];
    let n = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return Err(Error::Data(format!(
            "table {}/{}/{}/{} has an empty row or column",
            t.a, t.b, t.c, t.d
        )));
    }
    let mut stat = 0.0;
    for (i, &o) in obs.iter().enumerate() {
        let e = rows[i / 2] * cols[i % 2] / n;
        let diff = (o - e).abs();
        let diff = if yates { (diff - 0.5).max(0.0) } else { diff };
        stat += diff * diff / e;
    }
    Ok((stat, chi2_sf_df1(stat)))
}

/// One (construct, year) comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructTable {
    pub construct: Construct,
    pub year: i32,
    #[serde(flatten)]
    pub cells: Table2x2,
    pub odds_ratio: f64,
    /// Absent when a margin of the table is empty.
    pub chi2: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

impl ConstructTable {
    pub fn new(construct: Construct, year: i32, cells: Table2x2, cfg: &AnalysisConfig) -> Self {
        let test = chi2_test(&cells, cfg.yates).ok();
        ConstructTable {
            construct,
            year,
            cells,
            odds_ratio: odds_ratio(&cells, cfg.haldane),
            chi2: test.map(|t| t.0),
            p_value: test.map(|t| t.1),
            significant: false,
        }
    }
}

/// Builds five tables per year present in `tweets`, sorted by construct then
/// year, with Bonferroni flags applied.
pub fn build_tables(
    tweets: &[LabeledTweet],
    preds: &[GenderPrediction],
    cfg: &AnalysisConfig,
) -> Result<Vec<ConstructTable>> {
    cfg.validate()?;
    let gender: HashMap<&str, Gender> = preds.iter().map(|p| (p.user_id.as_str(), p.voted_gender)).collect();
    let mut missing: Vec<&str> = tweets
        .iter()
        .map(|t| t.user_id.as_str())
        .filter(|u| !gender.contains_key(u))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        let sample: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(Error::Data(format!(
            "{} users without a gender prediction, e.g. {}",
            missing.len(),
            sample.join(", ")
        )));
    }
    let mut counts: BTreeMap<(Construct, i32), Table2x2> = BTreeMap::new();
    for t in tweets {
        let male = gender[t.user_id.as_str()] == Gender::Male;
        for c in Construct::ALL {
            let cell = counts.entry((c, t.year)).or_default();
            if cfg.denominator == Denominator::Labeled && !c.in_family(t) {
                continue;
            }
            match (male, c.holds(t)) {
                (true, true) => cell.a += 1,
                (true, false) => cell.b += 1,
                (false, true) => cell.c += 1,
                (false, false) => cell.d += 1,
            }
        }
    }
    let mut tables: Vec<ConstructTable> = counts
        .into_iter()
        .map(|((c, y), cells)| ConstructTable::new(c, y, cells, cfg))
        .collect();
    apply_bonferroni(&mut tables, cfg);
    Ok(tables)
}

/// Flags tables with p strictly below alpha / comparisons.
pub fn apply_bonferroni(tables: &mut [ConstructTable], cfg: &AnalysisConfig) {
    let thr = cfg.threshold();
    for t in tables {
        t.significant = t.p_value.is_some_and(|p| p < thr);
    }
}

pub const CSV_HEADER: &str = "construct,year,odds_ratio,chi2,p_value,significant";

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "n/a".to_string(), f)
}

/// Plot-ready CSV, one row per table.
pub fn to_csv(tables: &[ConstructTable]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for t in tables {
        s.push_str(&format!(
            "{},{},{:.4},{},{},{}\n",
            t.construct,
            t.year,
            t.odds_ratio,
            opt(t.chi2, |x| format!("{x:.4}")),
            opt(t.p_value, |x| format!("{x:.6e}")),
            t.significant
        ));
    }
    s
}

pub fn write_csv(tables: &[ConstructTable], path: &Path) -> Result<()> {
    io::atomic_write(path, to_csv(tables).as_bytes())
}

pub fn write_json(tables: &[ConstructTable], path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(tables).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    io::atomic_write(path, s.as_bytes())
}
