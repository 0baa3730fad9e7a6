//! ComBat location/scale harmonization with parametric empirical Bayes.
//!
//! For feature `f`, record `i` at site `s`:
//!
//! ```text
//! y = α + X·β + γ_s + δ_s·σ·ε
//! z = (y − α − X·β) / σ                     standardized residual
//! y* = σ/δ*_s · (z − γ*_s) + α + X·β        harmonized value
//! ```
//!
//! `α` is the site-size-weighted mean of the fitted site intercepts, `X`
//! holds mean-centered age, sex (M = 1) and optionally group (ACr = 1).
//! `γ*` and `δ*` shrink the per-site sample location and scale of `z`
//! towards priors pooled across features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::datamodel::table::fmt_f64;
use crate::datamodel::{FeatureTable, RecordMeta};
use crate::error::{Error, Result};

const FORMAT: &str = "eegrisk-combat v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariate {
    Age,
    Sex,
    Group,
}

impl Covariate {
    pub fn as_str(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Sex => "sex",
            Covariate::Group => "group",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(Covariate::Age),
            "sex" => Ok(Covariate::Sex),
            "group" => Ok(Covariate::Group),
            other => Err(Error::Schema(format!("unknown covariate `{other}`"))),
        }
    }

    /// Age and sex; group is added only when asked for.
    pub fn defaults(preserve_group: bool) -> Vec<Covariate> {
        let mut v = vec![Covariate::Age, Covariate::Sex];
        if preserve_group {
            v.push(Covariate::Group);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombatOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CombatOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 100,
        }
    }
}

/// Empirical-Bayes hyperparameters of one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SitePrior {
    pub gamma_bar: f64,
    pub tau2: f64,
    /// Inverse-gamma shape.
    pub lambda: f64,
    /// Inverse-gamma scale.
    pub theta: f64,
    /// `false` when the priors were degenerate and γ̂, δ̂ were used as-is.
    pub shrunk: bool,
    /// Largest iteration count over this site's features.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizationModel {
    pub covariates: Vec<Covariate>,
    pub age_center: f64,
    pub sites: Vec<String>,
    pub site_sizes: Vec<usize>,
    pub features: Vec<String>,
    /// `false` for features passed through unchanged (zero residual variance).
    pub kept: Vec<bool>,
    pub alpha: Vec<f64>,
    /// `beta[feature][covariate]`.
    pub beta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// `[site][feature]`.
    pub gamma_hat: Vec<Vec<f64>>,
    pub delta_hat2: Vec<Vec<f64>>,
    pub gamma_star: Vec<Vec<f64>>,
    /// Scale (square root of the EB variance estimate).
    pub delta_star: Vec<Vec<f64>>,
    pub priors: Vec<SitePrior>,
}

fn covariate_row(r: &RecordMeta, covs: &[Covariate], age_center: f64) -> Vec<f64> {
    covs.iter()
        .map(|c| match c {
            Covariate::Age => r.age - age_center,
            Covariate::Sex => r.sex.code(),
            Covariate::Group => r.group.index() as f64,
        })
        .collect()
}

fn sample_var(xs: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = xs.len() as f64;
    let m = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Fits the model. Sites are ordered by name.
pub fn fit_combat(
    table: &FeatureTable,
    covariates: &[Covariate],
    opts: CombatOptions,
) -> Result<HarmonizationModel> {
    let n = table.n_rows();
    let records = table.records();
    let mut roster: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        roster.entry(r.site.as_str()).or_default().push(i);
    }
    if roster.len() < 2 {
        return Err(Error::SingleSite(roster.len()));
    }
    if let Some((site, rows)) = roster.iter().find(|(_, rows)| rows.len() < 3) {
        return Err(Error::Validation(format!(
            "site `{site}` has {} records; harmonization needs at least 3 per site",
            rows.len()
        )));
    }
    let sites: Vec<String> = roster.keys().map(|s| s.to_string()).collect();
    let site_rows: Vec<Vec<usize>> = roster.into_values().collect();
    let mut site_of = vec![0; n];
    for (s, rows) in site_rows.iter().enumerate() {
        for &i in rows {
            site_of[i] = s;
        }
    }
    let n_sites = sites.len();
    let age_center = records.iter().map(|r| r.age).sum::<f64>() / n as f64;
    let p = n_sites + covariates.len();

    let design = DMatrix::from_fn(n, p, |i, j| {
        if j < n_sites {
            (site_of[i] == j) as u8 as f64
        } else {
            covariate_row(
                &records[i],
                &covariates[j - n_sites..j - n_sites + 1],
                age_center,
            )[0]
        }
    });
    let gram = design.transpose() * &design;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numeric(
            "covariate design is singular (a covariate is constant or confounded with site)".into(),
        )
    })?;

    let nf = table.n_features();
    let mut model = HarmonizationModel {
        covariates: covariates.to_vec(),
        age_center,
        site_sizes: site_rows.iter().map(Vec::len).collect(),
        sites,
        features: table.names().to_vec(),
        kept: vec![true; nf],
        alpha: vec![0.0; nf],
        beta: vec![vec![0.0; covariates.len()]; nf],
        sigma: vec![0.0; nf],
        gamma_hat: vec![vec![0.0; nf]; n_sites],
        delta_hat2: vec![vec![1.0; nf]; n_sites],
        gamma_star: vec![vec![0.0; nf]; n_sites],
        delta_star: vec![vec![1.0; nf]; n_sites],
        priors: Vec::new(),
    };

    let mut z_cols: Vec<Vec<f64>> = Vec::with_capacity(nf);
    for (f, col) in table.columns().iter().enumerate() {
        let y = DVector::from_column_slice(col);
        let b = chol.solve(&(design.transpose() * &y));
        let alpha: f64 = (0..n_sites)
            .map(|s| model.site_sizes[s] as f64 * b[s])
            .sum::<f64>()
            / n as f64;
        let resid = &y - &design * &b;
        let rss = resid.iter().map(|r| r * r).sum::<f64>();
        let sigma = (rss / (n - n_sites) as f64).sqrt();
        model.alpha[f] = alpha;
        model.beta[f] = (0..covariates.len()).map(|k| b[n_sites + k]).collect();
        let first = col[0];
        if col.iter().all(|&v| v == first) || !(sigma > 1e-12 * (alpha.abs() + 1.0)) {
            log::warn!(
                "feature `{}` has zero residual variance; passed through unharmonized",
                model.features[f]
            );
            model.kept[f] = false;
            model.sigma[f] = 0.0;
            z_cols.push(Vec::new());
            continue;
        }
        model.sigma[f] = sigma;
        let fitted_cov =
            design.columns(n_sites, covariates.len()) * b.rows(n_sites, covariates.len());
        z_cols.push(
            (0..n)
                .map(|i| (col[i] - alpha - fitted_cov[i]) / sigma)
                .collect(),
        );
    }

    let kept: Vec<usize> = (0..nf).filter(|&f| model.kept[f]).collect();
    for (s, rows) in site_rows.iter().enumerate() {
        let ns = rows.len() as f64;
        for &f in &kept {
            let z = &z_cols[f];
            let g = rows.iter().map(|&i| z[i]).sum::<f64>() / ns;
            model.gamma_hat[s][f] = g;
            model.delta_hat2[s][f] = sample_var(rows.iter().map(|&i| z[i]));
        }
        let prior = site_prior(&model.gamma_hat[s], &model.delta_hat2[s], &kept);
        let mut prior = prior;
        for &f in &kept {
            let (g, d2, it) = if prior.shrunk {
                solve_eb(
                    &z_cols[f],
                    rows,
                    model.gamma_hat[s][f],
                    model.delta_hat2[s][f],
                    &prior,
                    opts,
                )?
            } else {
                (model.gamma_hat[s][f], model.delta_hat2[s][f], 0)
            };
            model.gamma_star[s][f] = g;
            model.delta_star[s][f] = d2.sqrt();
            prior.iterations = prior.iterations.max(it);
        }
        model.priors.push(prior);
    }

    if let Some((s, f)) = (0..n_sites)
        .flat_map(|s| kept.iter().map(move |&f| (s, f)))
        .find(|&(s, f)| !(model.delta_star[s][f] > 0.0))
    {
        return Err(Error::Numeric(format!(
            "site `{}` feature `{}` has zero scale; the feature is constant within that site",
            model.sites[s], model.features[f]
        )));
    }
    Ok(model)
}

/// Method-of-moments priors across the kept features of one site. Fewer
/// than two features or zero spread in `δ̂²` leaves nothing to pool, so
/// shrinkage is switched off.
fn site_prior(gamma_hat: &[f64], delta_hat2: &[f64], kept: &[usize]) -> SitePrior {
    let off = SitePrior {
        gamma_bar: f64::NAN,
        tau2: f64::NAN,
        lambda: f64::NAN,
        theta: f64::NAN,
        shrunk: false,
        iterations: 0,
    };
    if kept.len() < 2 {
        return off;
    }
    let g = kept.iter().map(|&f| gamma_hat[f]);
    let d = kept.iter().map(|&f| delta_hat2[f]);
    let gamma_bar = g.clone().sum::<f64>() / kept.len() as f64;
    let tau2 = sample_var(g);
    let m = d.clone().sum::<f64>() / kept.len() as f64;
    let s2 = sample_var(d);
    if !(s2 > 1e-12 * m * m) {
        return SitePrior {
            gamma_bar,
            tau2,
            ..off
        };
    }
    SitePrior {
        gamma_bar,
        tau2,
        lambda: (2.0 * s2 + m * m) / s2,
        theta: (m * s2 + m * m * m) / s2,
        shrunk: true,
        iterations: 0,
    }
}

/// Alternating posterior-mean updates for one (site, feature).
fn solve_eb(
    z: &[f64],
    rows: &[usize],
    gamma_hat: f64,
    delta_hat2: f64,
    prior: &SitePrior,
    opts: CombatOptions,
) -> Result<(f64, f64, usize)> {
    let n = rows.len() as f64;
    let (mut g_old, mut d_old) = (gamma_hat, delta_hat2);
    let mut trace = Vec::new();
    for it in 1..=opts.max_iter {
        let g = (n * prior.tau2 * gamma_hat + d_old * prior.gamma_bar) / (n * prior.tau2 + d_old);
        let ss: f64 = rows.iter().map(|&i| (z[i] - g) * (z[i] - g)).sum();
        let d = (prior.theta + 0.5 * ss) / (n / 2.0 + prior.lambda - 1.0);
        let change = (g - g_old).abs().max((d - d_old).abs());
        trace.push(change);
        g_old = g;
        d_old = d;
        if change < opts.tol {
            return Ok((g, d, it));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        trace,
    })
}

/// Harmonizes `table` with a fitted model. Features are matched by name.
pub fn apply_combat(model: &HarmonizationModel, table: &FeatureTable) -> Result<FeatureTable> {
    if table.n_features() != model.features.len() {
        return Err(Error::Schema(format!(
            "table has {} features, model was fitted on {}",
            table.n_features(),
            model.features.len()
        )));
    }
    let index: Vec<usize> = table
        .names()
        .iter()
        .map(|name| {
            model
                .features
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| {
                    Error::Schema(format!("feature `{name}` not in the harmonization model"))
                })
        })
        .collect::<Result<_>>()?;
    let site_idx: Vec<usize> = table
        .records()
        .iter()
        .map(|r| {
            model
                .sites
                .iter()
                .position(|s| *s == r.site)
                .ok_or_else(|| Error::UnknownSite(r.site.clone()))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<Vec<f64>> = table
        .records()
        .iter()
        .map(|r| covariate_row(r, &model.covariates, model.age_center))
        .collect();

    let columns = table
        .columns()
        .iter()
        .zip(&index)
        .map(|(col, &f)| {
            if !model.kept[f] {
                return col.clone();
            }
            let (alpha, sigma, beta) = (model.alpha[f], model.sigma[f], &model.beta[f]);
            col.iter()
                .enumerate()
                .map(|(i, &y)| {
                    let s = site_idx[i];
                    let cov: f64 = xs[i].iter().zip(beta).map(|(x, b)| x * b).sum();
                    let z = (y - alpha - cov) / sigma;
                    sigma / model.delta_star[s][f] * (z - model.gamma_star[s][f]) + alpha + cov
                })
                .collect()
        })
        .collect();
    table.with_columns(columns)
}

/// `fit_combat` then `apply_combat` on the same table.
pub fn harmonize(
    table: &FeatureTable,
    covariates: &[Covariate],
    opts: CombatOptions,
) -> Result<(HarmonizationModel, FeatureTable)> {
    let model = fit_combat(table, covariates, opts)?;
    let out = apply_combat(&model, table)?;
    Ok((model, out))
}

impl HarmonizationModel {
    pub fn dropped(&self) -> Vec<&str> {
        self.features
            .iter()
            .zip(&self.kept)
            .filter(|(_, k)| !**k)
            .map(|(f, _)| f.as_str())
            .collect()
    }

    /// Writes `model.csv`, `features.csv`, `site_params.csv` and
    /// `hyper.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let covs: Vec<&str> = self.covariates.iter().map(|c| c.as_str()).collect();

        let mut model = String::from("key,value\n");
        let _ = writeln!(model, "format,{FORMAT}");
        let _ = writeln!(model, "covariates,{}", covs.join(";"));
        let _ = writeln!(model, "age_center,{}", fmt_f64(self.age_center));

        let mut feats = String::from("feature,kept,alpha,sigma");
        for c in &covs {
            let _ = write!(feats, ",beta_{c}");
        }
        feats.push('\n');
        for f in 0..self.features.len() {
            let _ = write!(
                feats,
                "{},{},{},{}",
                self.features[f],
                self.kept[f],
                fmt_f64(self.alpha[f]),
                fmt_f64(self.sigma[f])
            );
            for b in &self.beta[f] {
                let _ = write!(feats, ",{}", fmt_f64(*b));
            }
            feats.push('\n');
        }

        let mut params = String::from("site,feature,gamma_hat,delta_hat2,gamma_star,delta_star\n");
        for s in 0..self.sites.len() {
            for f in 0..self.features.len() {
                let _ = writeln!(
                    params,
                    "{},{},{},{},{},{}",
                    self.sites[s],
                    self.features[f],
                    fmt_f64(self.gamma_hat[s][f]),
                    fmt_f64(self.delta_hat2[s][f]),
                    fmt_f64(self.gamma_star[s][f]),
                    fmt_f64(self.delta_star[s][f])
                );
            }
        }

        let mut hyper = String::from("site,n,gamma_bar,tau2,lambda,theta,shrunk,iterations\n");
        for (s, p) in self.priors.iter().enumerate() {
            let _ = writeln!(
                hyper,
                "{},{},{},{},{},{},{},{}",
                self.sites[s],
                self.site_sizes[s],
                fmt_f64(p.gamma_bar),
                fmt_f64(p.tau2),
                fmt_f64(p.lambda),
                fmt_f64(p.theta),
                p.shrunk,
                p.iterations
            );
        }

        for (name, body) in [
            ("model.csv", model),
            ("features.csv", feats),
            ("site_params.csv", params),
            ("hyper.csv", hyper),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |name: &str| -> Result<Vec<csv::StringRecord>> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            csv::ReaderBuilder::new()
                .from_reader(text.as_bytes())
                .records()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Schema(format!("{name}: {e}")))
        };
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Schema(format!("bad number `{s}` for {what}")))
        };

        let mut kv = BTreeMap::new();
        for r in load("model.csv")? {
            kv.insert(r[0].to_string(), r[1].to_string());
        }
        if kv.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::Schema(format!("model.csv is not `{FORMAT}`")));
        }
        let covariates: Vec<Covariate> = match kv.get("covariates").map(String::as_str) {
            Some("") | None => Vec::new(),
            Some(s) => s.split(';').map(Covariate::parse).collect::<Result<_>>()?,
        };
        let age_center = num(
            kv.get("age_center").map(String::as_str).unwrap_or(""),
            "age_center",
        )?;

        let mut features = Vec::new();
        let (mut kept, mut alpha, mut sigma, mut beta) = (vec![], vec![], vec![], vec![]);
        for r in load("features.csv")? {
            features.push(r[0].to_string());
            kept.push(&r[1] == "true");
            alpha.push(num(&r[2], "alpha")?);
            sigma.push(num(&r[3], "sigma")?);
            beta.push(
                (0..covariates.len())
                    .map(|k| num(&r[4 + k], "beta"))
                    .collect::<Result<Vec<_>>>()?,
            );
        }

        let mut sites = Vec::new();
        let mut site_sizes = Vec::new();
        let mut priors = Vec::new();
        for r in load("hyper.csv")? {
            sites.push(r[0].to_string());
            site_sizes.push(
                r[1].parse()
                    .map_err(|_| Error::Schema(format!("bad site size `{}`", &r[1])))?,
            );
            priors.push(SitePrior {
                gamma_bar: num(&r[2], "gamma_bar")?,
                tau2: num(&r[3], "tau2")?,
                lambda: num(&r[4], "lambda")?,
                theta: num(&r[5], "theta")?,
                shrunk: &r[6] == "true",
                iterations: r[7]
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad iteration count `{}`", &r[7])))?,
            });
        }

        let nf = features.len();
        let ns = sites.len();
        let mut tables = vec![vec![vec![0.0; nf]; ns]; 4];
        let rows = load("site_params.csv")?;
        if rows.len() != nf * ns {
            return Err(Error::Schema(format!(
                "site_params.csv has {} rows, expected {}",
                rows.len(),
                nf * ns
            )));
        }
        for (k, r) in rows.iter().enumerate() {
            let (s, f) = (k / nf, k % nf);
            if r[0] != *sites[s] || r[1] != *features[f] {
                return Err(Error::Schema(format!(
                    "site_params.csv row {} out of order",
                    k + 1
                )));
            }
            for (t, table) in tables.iter_mut().enumerate() {
                table[s][f] = num(&r[2 + t], "site parameter")?;
            }
        }
        let mut it = tables.into_iter();
        Ok(HarmonizationModel {
            covariates,
            age_center,
            sites,
            site_sizes,
            features,
            kept,
            alpha,
            beta,
            sigma,
            gamma_hat: it.next().unwrap_or_default(),
            delta_hat2: it.next().unwrap_or_default(),
            gamma_star: it.next().unwrap_or_default(),
            delta_star: it.next().unwrap_or_default(),
            priors,
        })
    }
}
