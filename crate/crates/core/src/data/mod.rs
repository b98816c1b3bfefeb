//! Export flows, revealed comparative advantage and the binary
//! country × product competitiveness matrices derived from them.

mod synth;

pub use synth::{generate_synthetic_world, CapabilityWorld, SyntheticWorld, WorldParams};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Aggregation level of HS product codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DigitLevel {
    Two,
    Six,
}

impl DigitLevel {
    pub fn digits(self) -> usize {
        match self {
            DigitLevel::Two => 2,
            DigitLevel::Six => 6,
        }
    }

    pub fn from_digits(d: usize) -> Result<Self> {
        match d {
            2 => Ok(DigitLevel::Two),
            6 => Ok(DigitLevel::Six),
            _ => Err(Error::param(format!("digit level must be 2 or 6, got {d}"))),
        }
    }

    fn of_code(code: &str) -> Option<Self> {
        if !code.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Self::from_digits(code.len()).ok()
    }
}

/// Export values E_cp(y): one country × product matrix per year.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportTensor<T> {
    years: Vec<i32>,
    countries: Vec<String>,
    products: Vec<String>,
    level: DigitLevel,
    values: Vec<Array2<T>>,
}

fn check_unique(what: &str, items: &[String]) -> Result<()> {
    let set: BTreeSet<&String> = items.iter().collect();
    if set.len() != items.len() {
        return Err(Error::Format(format!("duplicate {what} in index")));
    }
    Ok(())
}

impl<T: Scalar> ExportTensor<T> {
    pub fn new(
        years: Vec<i32>,
        countries: Vec<String>,
        products: Vec<String>,
        values: Vec<Array2<T>>,
    ) -> Result<Self> {
        if years.is_empty() || countries.is_empty() || products.is_empty() {
            return Err(Error::Format("export tensor needs at least one year, country and product".into()));
        }
        check_unique("countries", &countries)?;
        check_unique("products", &products)?;
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("years must be strictly increasing".into()));
        }
        let level = DigitLevel::of_code(&products[0])
            .ok_or_else(|| Error::Format(format!("bad product code {:?}", products[0])))?;
        if let Some(bad) = products.iter().find(|p| DigitLevel::of_code(p) != Some(level)) {
            return Err(Error::Format(format!(
                "mixed digit levels: {:?} vs {}-digit codes",
                bad,
                level.digits()
            )));
        }
        if values.len() != years.len() {
            return Err(Error::shape(format!("{} matrices for {} years", values.len(), years.len())));
        }
        for m in &values {
            if m.dim() != (countries.len(), products.len()) {
                return Err(Error::shape(format!(
                    "matrix {:?} but index is {}x{}",
                    m.dim(),
                    countries.len(),
                    products.len()
                )));
            }
            if m.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                return Err(Error::Format("export values must be finite and non-negative".into()));
            }
        }
        Ok(Self { years, countries, products, level, values })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn products(&self) -> &[String] {
        &self.products
    }

    pub fn level(&self) -> DigitLevel {
        self.level
    }

    pub fn year_index(&self, year: i32) -> Result<usize> {
        self.years
            .binary_search(&year)
            .map_err(|_| Error::Data(format!("year {year} not present")))
    }

    pub fn matrix(&self, year: i32) -> Result<&Array2<T>> {
        Ok(&self.values[self.year_index(year)?])
    }

    pub fn matrices(&self) -> &[Array2<T>] {
        &self.values
    }

    /// Sum 6-digit products into their 2-digit sectors.
    pub fn aggregate_to_sectors(&self) -> Result<ExportTensor<T>> {
        if self.level != DigitLevel::Six {
            return Err(Error::Format("sector aggregation needs 6-digit products".into()));
        }
        let sectors: Vec<String> = self
            .products
            .iter()
            .map(|p| p[..2].to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let slot: HashMap<&str, usize> =
            sectors.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let owner: Vec<usize> = self.products.iter().map(|p| slot[&p[..2]]).collect();
        let values = self
            .values
            .iter()
            .map(|m| {
                let mut out = Array2::<T>::zeros((self.countries.len(), sectors.len()));
                for (j, col) in m.axis_iter(Axis(1)).enumerate() {
                    let mut dst = out.column_mut(owner[j]);
                    dst += &col;
                }
                out
            })
            .collect();
        Ok(ExportTensor {
            years: self.years.clone(),
            countries: self.countries.clone(),
            products: sectors,
            level: DigitLevel::Two,
            values,
        })
    }

    /// Revealed comparative advantage for one year.
    pub fn compute_rca(&self, year: i32) -> Result<RcaMatrix<T>> {
        Ok(RcaMatrix { year, values: rca(self.matrix(year)?)? })
    }

    /// RCA and the binary matrices for every year.
    pub fn competitiveness(&self, threshold: T) -> Result<CompetitivenessSeries<T>> {
        let rca = self
            .years
            .iter()
            .map(|&y| self.compute_rca(y))
            .collect::<Result<Vec<_>>>()?;
        let m = rca.iter().map(|r| binarize(r, threshold)).collect::<Result<Vec<_>>>()?;
        Ok(CompetitivenessSeries {
            years: self.years.clone(),
            countries: self.countries.clone(),
            products: self.products.clone(),
            rca,
            m,
        })
    }

    /// Same data with every value multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        for m in &mut out.values {
            m.mapv_inplace(|v| v * factor);
        }
        out
    }
}

/// RCA_cp = (E_cp / Σ_p' E_cp') / (Σ_c' E_c'p / Σ_c'p' E_c'p').
/// Countries or products with zero total get zero RCA.
pub fn rca<T: Scalar>(e: &Array2<T>) -> Result<Array2<T>> {
    let total: T = e.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::Degenerate("world export total is zero".into()));
    }
    let row_tot: Vec<T> = e.axis_iter(Axis(0)).map(|r| r.iter().copied().sum()).collect();
    let col_tot: Vec<T> = e.axis_iter(Axis(1)).map(|c| c.iter().copied().sum()).collect();
    let mut out = Array2::<T>::zeros(e.dim());
    for ((c, p), v) in out.indexed_iter_mut() {
        if row_tot[c] > T::zero() && col_tot[p] > T::zero() {
            *v = (e[[c, p]] / row_tot[c]) / (col_tot[p] / total);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaMatrix<T> {
    pub year: i32,
    pub values: Array2<T>,
}

/// M_cp(y): 1 iff the country is a competitive exporter of the product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompetitivenessMatrix {
    pub year: i32,
    pub entries: Array2<u8>,
}

impl CompetitivenessMatrix {
    pub fn n_countries(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_products(&self) -> usize {
        self.entries.ncols()
    }
}

/// M_cp = 1 iff RCA_cp ≥ threshold (boundary included).
pub fn binarize<T: Scalar>(r: &RcaMatrix<T>, threshold: T) -> Result<CompetitivenessMatrix> {
    if !(threshold > T::zero()) {
        return Err(Error::param("binarization threshold must be positive"));
    }
    Ok(CompetitivenessMatrix {
        year: r.year,
        entries: r.values.mapv(|v| u8::from(v >= threshold)),
    })
}

/// Aligned RCA and binary matrices over a run of years.
#[derive(Debug, Clone)]
pub struct CompetitivenessSeries<T> {
    pub years: Vec<i32>,
    pub countries: Vec<String>,
    pub products: Vec<String>,
    pub rca: Vec<RcaMatrix<T>>,
    pub m: Vec<CompetitivenessMatrix>,
}

impl<T: Scalar> CompetitivenessSeries<T> {
    pub fn year_index(&self, year: i32) -> Result<usize> {
        self.years
            .iter()
            .position(|&y| y == year)
            .ok_or_else(|| Error::Data(format!("year {year} not present")))
    }

    pub fn m(&self, year: i32) -> Result<&CompetitivenessMatrix> {
        Ok(&self.m[self.year_index(year)?])
    }

    pub fn rca(&self, year: i32) -> Result<&RcaMatrix<T>> {
        Ok(&self.rca[self.year_index(year)?])
    }

    /// RCA matrices for the inclusive year range.
    pub fn rca_window(&self, from: i32, to: i32) -> Result<Vec<RcaMatrix<T>>> {
        (from..=to).map(|y| self.rca(y).cloned()).collect()
    }

    /// Drop every year after `last`.
    pub fn truncated(&self, last: i32) -> Self {
        let keep: Vec<usize> = (0..self.years.len()).filter(|&i| self.years[i] <= last).collect();
        Self {
            years: keep.iter().map(|&i| self.years[i]).collect(),
            countries: self.countries.clone(),
            products: self.products.clone(),
            rca: keep.iter().map(|&i| self.rca[i].clone()).collect(),
            m: keep.iter().map(|&i| self.m[i].clone()).collect(),
        }
    }
}

/// Country × product pairs that stayed below a low RCA level through the
/// whole training window: candidates for a genuinely new export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub mask: Array2<bool>,
    pub training_window: (i32, i32),
    pub target_year: i32,
}

impl ActivationSet {
    pub fn contains(&self, c: usize, p: usize) -> bool {
        self.mask[[c, p]]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask.indexed_iter().filter(|(_, &m)| m).map(|(ix, _)| ix)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A pair qualifies iff RCA < `low_threshold` in every year of the history.
pub fn find_activations<T: Scalar>(
    rca_history: &[RcaMatrix<T>],
    low_threshold: T,
    target_year: i32,
) -> Result<ActivationSet> {
    let first = rca_history
        .first()
        .ok_or_else(|| Error::param("activation window is empty"))?;
    let dim = first.values.dim();
    let mut mask = Array2::from_elem(dim, true);
    for r in rca_history {
        if r.values.dim() != dim {
            return Err(Error::shape(format!("RCA for {} is {:?}, expected {:?}", r.year, r.values.dim(), dim)));
        }
        Zip::from(&mut mask).and(&r.values).for_each(|m, &v| *m &= v < low_threshold);
    }
    let last = rca_history.last().map(|r| r.year).unwrap_or(first.year);
    Ok(ActivationSet { mask, training_window: (first.year, last), target_year })
}

#[derive(Debug, Deserialize)]
struct FlowRow {
    year: i32,
    country: String,
    product: String,
    value: f64,
}

/// Read `year,country,product,value` rows. Repeated keys are summed.
pub fn load_export_flows<T: Scalar>(path: &Path, level: DigitLevel) -> Result<ExportTensor<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["year", "country", "product", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut flows: BTreeMap<(i32, String, String), f64> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<FlowRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::Parse { path: path.into(), line, msg: e.to_string() })?;
        match DigitLevel::of_code(&row.product) {
            Some(l) if l == level => {}
            _ => {
                return Err(Error::Format(format!(
                    "line {line}: product {:?} is not a {}-digit code",
                    row.product,
                    level.digits()
                )))
            }
        }
        if !(row.value >= 0.0) || !row.value.is_finite() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("value {} must be finite and non-negative", row.value),
            });
        }
        *flows.entry((row.year, row.country, row.product)).or_default() += row.value;
    }
    if flows.is_empty() {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "no rows".into() });
    }
    let years: Vec<i32> = flows.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let countries: Vec<String> =
        flows.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let products: Vec<String> =
        flows.keys().map(|k| k.2.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let ci: HashMap<&String, usize> = countries.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let pi: HashMap<&String, usize> = products.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut values = vec![Array2::<T>::zeros((countries.len(), products.len())); years.len()];
    for ((y, c, p), v) in &flows {
        let yi = years.binary_search(y).expect("year indexed");
        values[yi][[ci[c], pi[p]]] = T::lit(*v);
    }
    ExportTensor::new(years, countries, products, values)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { path: path.into(), line, msg: format!("{other:?}") },
    }
}

/// Write flows in the loader's format, zero entries skipped.
pub fn write_export_flows<T: Scalar>(t: &ExportTensor<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["year", "country", "product", "value"]).map_err(|e| csv_err(path, e))?;
    for (y, m) in t.years.iter().zip(&t.values) {
        for ((c, p), v) in m.indexed_iter() {
            if *v > T::zero() {
                w.write_record([
                    y.to_string(),
                    t.countries[c].clone(),
                    t.products[p].clone(),
                    v.to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
