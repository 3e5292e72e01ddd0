//! Stated-choice survey records, attribute supports and CSV ingest.
//!
//! Wages are kept in kCFA (thousands of CFA francs). Probabilities are
//! decimals in `[0, 1]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid support: {0}")]
    InvalidSupport(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmployerPub {
    Administration,
    PublicFirm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmployerPriv {
    Sme,
    LargeFirm,
}

impl EmployerPub {
    pub fn as_str(self) -> &'static str {
        match self {
            EmployerPub::Administration => "administration",
            EmployerPub::PublicFirm => "public_firm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "administration" => Some(EmployerPub::Administration),
            "public_firm" => Some(EmployerPub::PublicFirm),
            _ => None,
        }
    }
}

impl EmployerPriv {
    pub fn as_str(self) -> &'static str {
        match self {
            EmployerPriv::Sme => "sme",
            EmployerPriv::LargeFirm => "large_firm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "sme" => Some(EmployerPriv::Sme),
            "large_firm" => Some(EmployerPriv::LargeFirm),
            _ => None,
        }
    }
}

/// Scalar attributes of a scenario. Employer types read as 0/1 dummies
/// (1 for `public_firm` and `large_firm`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Y0,
    Y1,
    EmployerPub,
    EmployerPriv,
    HoursPub,
    HoursPriv,
    LayoffPub,
    LayoffPriv,
    PromoPub,
    PromoPriv,
}

impl Attribute {
    pub const ALL: [Attribute; 10] = [
        Attribute::Y0,
        Attribute::Y1,
        Attribute::EmployerPub,
        Attribute::EmployerPriv,
        Attribute::HoursPub,
        Attribute::HoursPriv,
        Attribute::LayoffPub,
        Attribute::LayoffPriv,
        Attribute::PromoPub,
        Attribute::PromoPriv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Y0 => "y0",
            Attribute::Y1 => "y1",
            Attribute::EmployerPub => "employer_pub",
            Attribute::EmployerPriv => "employer_priv",
            Attribute::HoursPub => "hours_pub",
            Attribute::HoursPriv => "hours_priv",
            Attribute::LayoffPub => "layoff_pub",
            Attribute::LayoffPriv => "layoff_priv",
            Attribute::PromoPub => "promo_pub",
            Attribute::PromoPriv => "promo_priv",
        }
    }

    fn is_probability(self) -> bool {
        matches!(
            self,
            Attribute::LayoffPub
                | Attribute::LayoffPriv
                | Attribute::PromoPub
                | Attribute::PromoPriv
        )
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One hypothetical offer pair: option 0 is the public-sector job, option 1
/// the private-sector job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub y0: f64,
    pub y1: f64,
    pub employer_pub: EmployerPub,
    pub employer_priv: EmployerPriv,
    pub hours_pub: f64,
    pub hours_priv: f64,
    pub layoff_pub: f64,
    pub layoff_priv: f64,
    pub promo_pub: f64,
    pub promo_priv: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.y0 > 0.0 && self.y1 > 0.0) || !self.y0.is_finite() || !self.y1.is_finite() {
            return Err(DatasetError::InvalidScenario(format!(
                "wages must be positive, got y0={} y1={}",
                self.y0, self.y1
            )));
        }
        for (name, h) in [
            ("hours_pub", self.hours_pub),
            ("hours_priv", self.hours_priv),
        ] {
            if !(h > 0.0 && h < 100.0) {
                return Err(DatasetError::InvalidScenario(format!(
                    "{name}={h} outside (0,100)"
                )));
            }
        }
        for attr in Attribute::ALL.iter().filter(|a| a.is_probability()) {
            let v = self.get(*attr);
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::InvalidScenario(format!(
                    "{attr}={v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Y0 => self.y0,
            Attribute::Y1 => self.y1,
            Attribute::EmployerPub => {
                f64::from(u8::from(self.employer_pub == EmployerPub::PublicFirm))
            }
            Attribute::EmployerPriv => {
                f64::from(u8::from(self.employer_priv == EmployerPriv::LargeFirm))
            }
            Attribute::HoursPub => self.hours_pub,
            Attribute::HoursPriv => self.hours_priv,
            Attribute::LayoffPub => self.layoff_pub,
            Attribute::LayoffPriv => self.layoff_priv,
            Attribute::PromoPub => self.promo_pub,
            Attribute::PromoPriv => self.promo_priv,
        }
    }

    /// Adds `delta` to a numeric attribute. Employer dummies flip to the other
    /// category when `delta` is nonzero.
    pub fn shifted(&self, attr: Attribute, delta: f64) -> Scenario {
        let mut x = *self;
        match attr {
            Attribute::Y0 => x.y0 += delta,
            Attribute::Y1 => x.y1 += delta,
            Attribute::EmployerPub => {
                if delta != 0.0 {
                    x.employer_pub = match x.employer_pub {
                        EmployerPub::Administration => EmployerPub::PublicFirm,
                        EmployerPub::PublicFirm => EmployerPub::Administration,
                    }
                }
            }
            Attribute::EmployerPriv => {
                if delta != 0.0 {
                    x.employer_priv = match x.employer_priv {
                        EmployerPriv::Sme => EmployerPriv::LargeFirm,
                        EmployerPriv::LargeFirm => EmployerPriv::Sme,
                    }
                }
            }
            Attribute::HoursPub => x.hours_pub += delta,
            Attribute::HoursPriv => x.hours_priv += delta,
            Attribute::LayoffPub => x.layoff_pub += delta,
            Attribute::LayoffPriv => x.layoff_priv += delta,
            Attribute::PromoPub => x.promo_pub += delta,
            Attribute::PromoPriv => x.promo_priv += delta,
        }
        x
    }

    /// t(s, x): the scenario with option-0 wage raised by `s`.
    pub fn shift_y0(&self, s: f64) -> Scenario {
        Scenario {
            y0: self.y0 + s,
            ..*self
        }
    }
}

/// Admissible attribute values (the set of scenarios the survey can show).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub wage_min: f64,
    pub wage_max: f64,
    pub wage_step: f64,
    pub employer_pub: Vec<EmployerPub>,
    pub employer_priv: Vec<EmployerPriv>,
    pub hours_pub: Vec<f64>,
    pub hours_priv: Vec<f64>,
    pub layoff_pub: Vec<f64>,
    pub layoff_priv: Vec<f64>,
    pub promo_pub: Vec<f64>,
    pub promo_priv: Vec<f64>,
}

impl Default for SupportSpec {
    fn default() -> Self {
        SupportSpec {
            wage_min: 300.0,
            wage_max: 1000.0,
            wage_step: 50.0,
            employer_pub: vec![EmployerPub::Administration, EmployerPub::PublicFirm],
            employer_priv: vec![EmployerPriv::Sme, EmployerPriv::LargeFirm],
            hours_pub: vec![35.0, 40.0],
            hours_priv: vec![40.0, 50.0, 60.0],
            layoff_pub: vec![0.02, 0.05, 0.10],
            layoff_priv: vec![0.10, 0.20, 0.30],
            promo_pub: vec![0.05, 0.10, 0.20],
            promo_priv: vec![0.05, 0.10, 0.20],
        }
    }
}

fn hull(levels: &[f64]) -> (f64, f64) {
    levels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn within(levels: &[f64], v: f64) -> bool {
    let (lo, hi) = hull(levels);
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    v >= lo - tol && v <= hi + tol
}

impl SupportSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.wage_min > 0.0 && self.wage_min <= self.wage_max) {
            return Err(DatasetError::InvalidSupport(format!(
                "wage range [{}, {}] is empty or nonpositive",
                self.wage_min, self.wage_max
            )));
        }
        if !(self.wage_step > 0.0) {
            return Err(DatasetError::InvalidSupport(
                "wage_step must be positive".into(),
            ));
        }
        let lists: [(&str, &[f64]); 6] = [
            ("hours_pub", &self.hours_pub),
            ("hours_priv", &self.hours_priv),
            ("layoff_pub", &self.layoff_pub),
            ("layoff_priv", &self.layoff_priv),
            ("promo_pub", &self.promo_pub),
            ("promo_priv", &self.promo_priv),
        ];
        for (name, levels) in lists {
            if levels.is_empty() {
                return Err(DatasetError::InvalidSupport(format!(
                    "{name} has no levels"
                )));
            }
        }
        if self.employer_pub.is_empty() || self.employer_priv.is_empty() {
            return Err(DatasetError::InvalidSupport(
                "employer categories are empty".into(),
            ));
        }
        Ok(())
    }

    /// Wage lattice `wage_min, wage_min + step, ..., <= wage_max`.
    pub fn wage_levels(&self) -> Vec<f64> {
        let n = ((self.wage_max - self.wage_min) / self.wage_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.wage_min + i as f64 * self.wage_step)
            .collect()
    }

    /// Numeric attributes are checked against the hull of their levels,
    /// categorical ones by membership.
    pub fn contains(&self, x: &Scenario) -> bool {
        let tol = 1e-9 * self.wage_max.abs().max(1.0);
        let wage_ok = |w: f64| w >= self.wage_min - tol && w <= self.wage_max + tol;
        wage_ok(x.y0)
            && wage_ok(x.y1)
            && self.employer_pub.contains(&x.employer_pub)
            && self.employer_priv.contains(&x.employer_priv)
            && within(&self.hours_pub, x.hours_pub)
            && within(&self.hours_priv, x.hours_priv)
            && within(&self.layoff_pub, x.layoff_pub)
            && within(&self.layoff_priv, x.layoff_priv)
            && within(&self.promo_pub, x.promo_pub)
            && within(&self.promo_priv, x.promo_priv)
    }

    /// Draws every attribute independently and uniformly from its levels.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        let wages = self.wage_levels();
        fn pick<T: Copy, R: Rng + ?Sized>(rng: &mut R, v: &[T]) -> T {
            v[rng.random_range(0..v.len())]
        }
        Scenario {
            y0: pick(rng, &wages),
            y1: pick(rng, &wages),
            employer_pub: pick(rng, &self.employer_pub),
            employer_priv: pick(rng, &self.employer_priv),
            hours_pub: pick(rng, &self.hours_pub),
            hours_priv: pick(rng, &self.hours_priv),
            layoff_pub: pick(rng, &self.layoff_pub),
            layoff_priv: pick(rng, &self.layoff_priv),
            promo_pub: pick(rng, &self.promo_pub),
            promo_priv: pick(rng, &self.promo_priv),
        }
    }

    /// Support spanned by the observed scenarios (min/max wages, distinct levels).
    pub fn infer(records: &[ChoiceRecord]) -> SupportSpec {
        fn levels(records: &[ChoiceRecord], f: impl Fn(&Scenario) -> f64) -> Vec<f64> {
            let mut v: Vec<f64> = records.iter().map(|r| f(&r.scenario)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
        let wages: Vec<f64> = records
            .iter()
            .flat_map(|r| [r.scenario.y0, r.scenario.y1])
            .collect();
        let (wmin, wmax) = hull(&wages);
        let mut all = wages.clone();
        all.sort_by(f64::total_cmp);
        all.dedup();
        let step = all
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let mut ep: Vec<EmployerPub> = records.iter().map(|r| r.scenario.employer_pub).collect();
        ep.sort();
        ep.dedup();
        let mut eq: Vec<EmployerPriv> = records.iter().map(|r| r.scenario.employer_priv).collect();
        eq.sort();
        eq.dedup();
        SupportSpec {
            wage_min: wmin,
            wage_max: wmax,
            wage_step: if step.is_finite() { step } else { 1.0 },
            employer_pub: ep,
            employer_priv: eq,
            hours_pub: levels(records, |x| x.hours_pub),
            hours_priv: levels(records, |x| x.hours_priv),
            layoff_pub: levels(records, |x| x.layoff_pub),
            layoff_priv: levels(records, |x| x.layoff_priv),
            promo_pub: levels(records, |x| x.promo_pub),
            promo_priv: levels(records, |x| x.promo_priv),
        }
    }
}

/// True iff t(s, x) stays inside the support.
pub fn in_identified_region(support: &SupportSpec, s: f64, x: &Scenario) -> bool {
    support.contains(&x.shift_y0(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub respondent_id: String,
    pub scenario_index: u32,
    pub scenario: Scenario,
    pub p_stated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ChoiceRecord>,
    pub support: SupportSpec,
}

impl Dataset {
    pub fn new(records: Vec<ChoiceRecord>, support: SupportSpec) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Schema("no records".into()));
        }
        support.validate()?;
        Ok(Dataset { records, support })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Respondent index per record, numbered in order of first appearance.
    pub fn respondent_index(&self) -> (Vec<usize>, usize) {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let idx = self
            .records
            .iter()
            .map(|r| {
                let n = seen.len();
                *seen.entry(r.respondent_id.as_str()).or_insert(n)
            })
            .collect();
        (idx, seen.len())
    }
}

/// Column names of the input CSV. `wage_scale` converts raw wage cells to kCFA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub respondent_id: String,
    pub scenario_index: String,
    pub p_stated: String,
    pub wage_pub: String,
    pub wage_priv: String,
    pub employer_pub: String,
    pub employer_priv: String,
    pub hours_pub: String,
    pub hours_priv: String,
    pub layoff_pub: String,
    pub layoff_priv: String,
    pub promo_pub: String,
    pub promo_priv: String,
    pub wage_scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            respondent_id: "respondent_id".into(),
            scenario_index: "scenario_index".into(),
            p_stated: "p_stated".into(),
            wage_pub: "wage_pub".into(),
            wage_priv: "wage_priv".into(),
            employer_pub: "employer_pub".into(),
            employer_priv: "employer_priv".into(),
            hours_pub: "hours_pub".into(),
            hours_priv: "hours_priv".into(),
            layoff_pub: "layoff_pub".into(),
            layoff_priv: "layoff_priv".into(),
            promo_pub: "promo_pub".into(),
            promo_priv: "promo_priv".into(),
            wage_scale: 1.0,
        }
    }
}

impl ColumnMap {
    fn names(&self) -> [&str; 13] {
        [
            &self.respondent_id,
            &self.scenario_index,
            &self.p_stated,
            &self.wage_pub,
            &self.wage_priv,
            &self.employer_pub,
            &self.employer_priv,
            &self.hours_pub,
            &self.hours_priv,
            &self.layoff_pub,
            &self.layoff_priv,
            &self.promo_pub,
            &self.promo_priv,
        ]
    }
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: &ColumnMap,
    support: Option<SupportSpec>,
) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema, support)
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    schema: &ColumnMap,
    support: Option<SupportSpec>,
) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Err(DatasetError::Schema("no records".into())),
    };
    if headers.is_empty() {
        return Err(DatasetError::Schema("no records".into()));
    }
    let mut col = [0usize; 13];
    for (slot, name) in col.iter_mut().zip(schema.names()) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let row_no = i + 2;
        let row = row.map_err(|e| DatasetError::Row {
            row: row_no,
            msg: e.to_string(),
        })?;
        let cell = |k: usize| row.get(col[k]).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64, DatasetError> {
            cell(k).parse::<f64>().map_err(|_| DatasetError::Row {
                row: row_no,
                msg: format!(
                    "cannot parse `{}` in column `{}`",
                    cell(k),
                    schema.names()[k]
                ),
            })
        };
        let p = num(2)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(DatasetError::Row {
                row: row_no,
                msg: "probability out of range".into(),
            });
        }
        let scenario_index = cell(1).parse::<u32>().map_err(|_| DatasetError::Row {
            row: row_no,
            msg: format!("cannot parse scenario index `{}`", cell(1)),
        })?;
        let employer_pub = EmployerPub::parse(cell(5)).ok_or_else(|| DatasetError::Row {
            row: row_no,
            msg: format!("unknown public employer `{}`", cell(5)),
        })?;
        let employer_priv = EmployerPriv::parse(cell(6)).ok_or_else(|| DatasetError::Row {
            row: row_no,
            msg: format!("unknown private employer `{}`", cell(6)),
        })?;
        let scenario = Scenario {
            y0: num(3)? * schema.wage_scale,
            y1: num(4)? * schema.wage_scale,
            employer_pub,
            employer_priv,
            hours_pub: num(7)?,
            hours_priv: num(8)?,
            layoff_pub: num(9)?,
            layoff_priv: num(10)?,
            promo_pub: num(11)?,
            promo_priv: num(12)?,
        };
        scenario.validate().map_err(|e| DatasetError::Row {
            row: row_no,
            msg: e.to_string(),
        })?;
        records.push(ChoiceRecord {
            respondent_id: cell(0).to_string(),
            scenario_index,
            scenario,
            p_stated: p,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::Schema("no records".into()));
    }
    let support = support.unwrap_or_else(|| SupportSpec::infer(&records));
    Dataset::new(records, support)
}

pub const CANONICAL_HEADER: [&str; 13] = [
    "respondent_id",
    "scenario_index",
    "p_stated",
    "wage_pub",
    "wage_priv",
    "employer_pub",
    "employer_priv",
    "hours_pub",
    "hours_priv",
    "layoff_pub",
    "layoff_priv",
    "promo_pub",
    "promo_priv",
];

/// Writes the canonical schema. Floats use shortest round-trip formatting so
/// that load after save reproduces every value bit for bit.
pub fn write_dataset<W: std::io::Write>(d: &Dataset, w: W) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CANONICAL_HEADER)?;
    for r in &d.records {
        let x = &r.scenario;
        wtr.write_record([
            r.respondent_id.clone(),
            r.scenario_index.to_string(),
            r.p_stated.to_string(),
            x.y0.to_string(),
            x.y1.to_string(),
            x.employer_pub.as_str().to_string(),
            x.employer_priv.as_str().to_string(),
            x.hours_pub.to_string(),
            x.hours_priv.to_string(),
            x.layoff_pub.to_string(),
            x.layoff_priv.to_string(),
            x.promo_pub.to_string(),
            x.promo_priv.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_dataset(d, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub n_respondents: usize,
    pub out_of_support: usize,
    pub duplicate_keys: usize,
    /// Share of stated probabilities on multiples of 0.10.
    pub heaping_share: f64,
    pub single_scenario_respondents: usize,
    /// Respondents with at least two scenarios.
    pub paired_count: usize,
    pub qwtp_gate_open: bool,
}

pub fn validate(d: &Dataset) -> ValidationReport {
    let out_of_support = d
        .records
        .iter()
        .filter(|r| !d.support.contains(&r.scenario))
        .count();
    let mut keys = HashSet::new();
    let duplicate_keys = d
        .records
        .iter()
        .filter(|r| !keys.insert((r.respondent_id.as_str(), r.scenario_index)))
        .count();
    let heaped = d
        .records
        .iter()
        .filter(|r| {
            let t = r.p_stated * 10.0;
            (t - t.round()).abs() < 1e-9
        })
        .count();
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &d.records {
        *per.entry(r.respondent_id.as_str()).or_default() += 1;
    }
    let single = per.values().filter(|&&c| c == 1).count();
    let paired = per.values().filter(|&&c| c >= 2).count();
    ValidationReport {
        n_records: d.records.len(),
        n_respondents: per.len(),
        out_of_support,
        duplicate_keys,
        heaping_share: if d.records.is_empty() {
            0.0
        } else {
            heaped as f64 / d.records.len() as f64
        },
        single_scenario_respondents: single,
        paired_count: paired,
        qwtp_gate_open: paired > 0,
    }
}
