//! Planted capability worlds: countries hold capabilities, products need
//! them, and a country exports a product (noise aside) exactly when it
//! covers the product's requirements. Capabilities come in groups; a missing
//! capability is acquired faster the more of its group a country already
//! holds, which is what makes related exports predictive.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::ExportTensor;
use crate::error::{Error, Result};
use crate::rng::{tag, task_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub n_countries: usize,
    pub n_products: usize,
    pub n_capabilities: usize,
    pub n_years: usize,
    pub start_year: i32,
    /// Probability of holding each capability in the first year.
    pub initial_endowment: f64,
    /// Per-year probability of acquiring a missing capability unaided.
    pub acquisition_rate: f64,
    /// Added to the acquisition probability in proportion to the share of
    /// the capability's group already held.
    pub relatedness: f64,
    /// Capabilities are split into this many contiguous groups.
    pub n_groups: usize,
    /// Scale of the probability of a spurious export.
    pub noise_rate: f64,
    /// A product a country will cover within this many years is already
    /// exported with probability `nascent_rate`, at `nascent_scale` of the
    /// full volume.
    pub nascent_years: usize,
    pub nascent_rate: f64,
    pub nascent_scale: f64,
    /// Requirements beyond the product's own sector capability, drawn from
    /// its group.
    pub max_extra_requirements: usize,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_countries: 50,
            n_products: 200,
            n_capabilities: 20,
            n_years: 15,
            start_year: 2000,
            initial_endowment: 0.2,
            acquisition_rate: 0.005,
            relatedness: 0.1,
            n_groups: 5,
            noise_rate: 0.02,
            nascent_years: 2,
            nascent_rate: 0.2,
            nascent_scale: 0.05,
            max_extra_requirements: 2,
            seed: 0,
        }
    }
}

/// The planted structure behind a synthetic export tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityWorld {
    /// Country × capability holdings, one matrix per year.
    pub country_capabilities: Vec<Array2<u8>>,
    /// Product × capability requirements.
    pub product_requirements: Array2<u8>,
    /// Sector (and primary capability) of every product.
    pub product_sector: Vec<usize>,
    pub capability_group: Vec<usize>,
    pub acquisition_rate: f64,
    pub relatedness: f64,
    pub noise_rate: f64,
}

impl CapabilityWorld {
    pub fn covers(&self, year_idx: usize, c: usize, p: usize) -> bool {
        let caps = self.country_capabilities[year_idx].row(c);
        self.product_requirements
            .row(p)
            .iter()
            .zip(caps.iter())
            .all(|(&need, &have)| need == 0 || have == 1)
    }

    /// Capabilities required by product `p`.
    pub fn requirements(&self, p: usize) -> Vec<usize> {
        self.product_requirements
            .row(p)
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == 1)
            .map(|(k, _)| k)
            .collect()
    }

    /// Capabilities in the group of product `p`'s sector.
    pub fn related(&self, p: usize) -> Vec<usize> {
        let g = self.capability_group[self.product_sector[p]];
        (0..self.capability_group.len()).filter(|&k| self.capability_group[k] == g).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld<T> {
    pub exports: ExportTensor<T>,
    pub world: CapabilityWorld,
}

pub fn sector_code(s: usize) -> String {
    format!("{:02}", s + 1)
}

/// Deterministic for a fixed `params.seed`.
pub fn generate_synthetic_world<T: Scalar>(params: &WorldParams) -> Result<SyntheticWorld<T>> {
    let WorldParams { n_countries, n_products, n_capabilities, n_years, .. } = *params;
    if n_countries == 0 || n_products == 0 || n_capabilities == 0 || n_years == 0 {
        return Err(Error::param("world sizes must all be at least 1"));
    }
    if n_capabilities > 99 {
        return Err(Error::param("at most 99 capabilities (two-digit sector codes)"));
    }
    for (name, v) in [
        ("initial_endowment", params.initial_endowment),
        ("acquisition_rate", params.acquisition_rate),
        ("acquisition_rate + relatedness", params.acquisition_rate + params.relatedness),
        ("noise_rate", params.noise_rate),
        ("nascent_rate", params.nascent_rate),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(format!("{name} must be a probability")));
        }
    }
    if params.n_groups == 0 || params.n_groups > n_capabilities {
        return Err(Error::param("n_groups must lie in 1..=n_capabilities"));
    }
    if !(params.nascent_scale >= 0.0 && params.nascent_scale.is_finite()) {
        return Err(Error::param("nascent_scale must be non-negative"));
    }
    if !(params.relatedness >= 0.0) {
        return Err(Error::param("relatedness must be non-negative"));
    }
    let mut rng = task_rng(params.seed, &[tag("synthetic-world")]);
    let group: Vec<usize> = (0..n_capabilities).map(|k| k * params.n_groups / n_capabilities).collect();
    let mates: Vec<Vec<usize>> =
        (0..n_capabilities).map(|k| (0..n_capabilities).filter(|&j| j != k && group[j] == group[k]).collect()).collect();

    // contiguous blocks keep product codes in sorted order
    let product_sector: Vec<usize> = (0..n_products).map(|p| p * n_capabilities / n_products).collect();
    let mut req = Array2::<u8>::zeros((n_products, n_capabilities));
    for p in 0..n_products {
        let own = product_sector[p];
        req[[p, own]] = 1;
        let pool = &mates[own];
        let n_extra = rng.random_range(0..=params.max_extra_requirements.min(pool.len()));
        for i in sample(&mut rng, pool.len(), n_extra) {
            req[[p, pool[i]]] = 1;
        }
    }

    let mut caps = Vec::with_capacity(n_years);
    let mut current = Array2::<u8>::zeros((n_countries, n_capabilities));
    current.mapv_inplace(|_| u8::from(rng.random_bool(params.initial_endowment)));
    caps.push(current.clone());
    for _ in 1..n_years {
        let prev = current.clone();
        for ((c, k), h) in current.indexed_iter_mut() {
            if *h == 1 {
                continue;
            }
            let held = mates[k].iter().filter(|&&j| prev[[c, j]] == 1).count();
            let share = if mates[k].is_empty() { 0.0 } else { held as f64 / mates[k].len() as f64 };
            *h = u8::from(rng.random_bool(params.acquisition_rate + params.relatedness * share));
        }
        caps.push(current.clone());
    }

    let size = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let popularity = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let jitter = LogNormal::new(0.0, 0.3).expect("valid lognormal");
    let country_size: Vec<f64> = (0..n_countries).map(|_| size.sample(&mut rng)).collect();
    let product_base: Vec<f64> = (0..n_products).map(|_| popularity.sample(&mut rng)).collect();
    let n_req: Vec<usize> = (0..n_products).map(|p| req.row(p).iter().filter(|&&r| r == 1).count()).collect();

    let world = CapabilityWorld {
        country_capabilities: caps,
        product_requirements: req,
        product_sector,
        capability_group: group,
        acquisition_rate: params.acquisition_rate,
        relatedness: params.relatedness,
        noise_rate: params.noise_rate,
    };

    let mut values = Vec::with_capacity(n_years);
    for y in 0..n_years {
        let held = &world.country_capabilities[y];
        let ahead = &world.country_capabilities[(y + params.nascent_years).min(n_years - 1)];
        let mut e = Array2::<T>::zeros((n_countries, n_products));
        for c in 0..n_countries {
            for p in 0..n_products {
                let have = world
                    .product_requirements
                    .row(p)
                    .iter()
                    .zip(held.row(c).iter())
                    .filter(|(&need, &h)| need == 1 && h == 1)
                    .count();
                let scale = country_size[c] * product_base[p];
                let soon = world
                    .product_requirements
                    .row(p)
                    .iter()
                    .zip(ahead.row(c).iter())
                    .all(|(&need, &h)| need == 0 || h == 1);
                let v = if have == n_req[p] {
                    scale * jitter.sample(&mut rng)
                } else if soon && rng.random_bool(params.nascent_rate) {
                    scale * params.nascent_scale * jitter.sample(&mut rng)
                } else {
                    let coverage = have as f64 / n_req[p] as f64;
                    let p_noise = params.noise_rate * (0.25 + 0.75 * coverage);
                    if rng.random_bool(p_noise) {
                        scale * 0.1 * rng.random::<f64>()
                    } else {
                        0.0
                    }
                };
                e[[c, p]] = T::lit(v);
            }
        }
        values.push(e);
    }

    let mut within = vec![0usize; n_capabilities];
    let products: Vec<String> = world
        .product_sector
        .iter()
        .map(|&s| {
            within[s] += 1;
            format!("{}{:04}", sector_code(s), within[s])
        })
        .collect();
    let exports = ExportTensor::new(
        (0..n_years as i32).map(|y| params.start_year + y).collect(),
        (0..n_countries).map(|c| format!("C{c:03}")).collect(),
        products,
        values,
    )?;
    Ok(SyntheticWorld { exports, world })
}
