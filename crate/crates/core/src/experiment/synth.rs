use super::config::ExperimentConfig;
use crate::error::Result;
use crate::numerics::{sample_isotropic_noise, RngStream, Signal};

/// Clean signals, held apart so that only evaluation code reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanSignals(Vec<Signal<f64>>);

impl CleanSignals {
    pub fn for_evaluation(&self) -> &[Signal<f64>] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub noisy: Vec<Signal<f64>>,
    pub labels: Vec<usize>,
    pub clean: CleanSignals,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }
}

/// Train and test splits drawn from the same class templates.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub train: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

/// Fixed per-seed geometry: class templates and shared nuisance bumps.
struct Geometry {
    templates: Vec<Vec<f64>>,
    nuisance: Vec<Vec<f64>>,
}

fn bump(cfg: &ExperimentConfig, rng: &mut RngStream) -> Vec<f64> {
    let cy = rng.uniform() * cfg.height as f64;
    let cx = rng.uniform() * cfg.width as f64;
    let w2 = 2.0 * cfg.bump_width * cfg.bump_width;
    let mut out = Vec::with_capacity(cfg.dim());
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            out.push((-(dy * dy + dx * dx) / w2).exp());
        }
    }
    out
}

/// Sum of bumps rescaled to a maximum of 1.
fn smooth_field(cfg: &ExperimentConfig, bumps: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut field = vec![0.0; cfg.dim()];
    for _ in 0..bumps.max(1) {
        field.iter_mut().zip(bump(cfg, rng)).for_each(|(f, b)| *f += b);
    }
    let max = field.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        field.iter_mut().for_each(|f| *f /= max);
    }
    field
}

impl Geometry {
    fn new(cfg: &ExperimentConfig, rng: &mut RngStream) -> Self {
        let templates = (0..cfg.classes)
            .map(|_| smooth_field(cfg, cfg.template_bumps, rng))
            .collect();
        let nuisance = (0..cfg.nuisance_bumps).map(|_| smooth_field(cfg, 1, rng)).collect();
        Self { templates, nuisance }
    }

    /// `baseline + class_amplitude * a * T_k + nuisance_amplitude * mean_j u_j N_j`,
    /// with `a ~ U[0.5, 1]` and `u_j ~ U[0, 1]`.
    fn clean(&self, cfg: &ExperimentConfig, class: usize, rng: &mut RngStream) -> Vec<f64> {
        let amp = cfg.class_amplitude * (0.5 + 0.5 * rng.uniform());
        let mut s: Vec<f64> = self.templates[class]
            .iter()
            .map(|t| cfg.baseline + amp * t)
            .collect();
        if !self.nuisance.is_empty() {
            let scale = cfg.nuisance_amplitude / self.nuisance.len() as f64;
            for field in &self.nuisance {
                let u = scale * rng.uniform();
                s.iter_mut().zip(field).for_each(|(v, n)| *v += u * n);
            }
        }
        s.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        s
    }
}

fn draw_split(
    cfg: &ExperimentConfig,
    geo: &Geometry,
    n: usize,
    sigma: f64,
    rng: &RngStream,
) -> Result<Dataset> {
    let noise = cfg.noise_model(sigma)?;
    let mut clean_rng = rng.derive_named("clean");
    let mut noise_rng = rng.derive_named("noise");
    let mut noisy = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % cfg.classes;
        let s = Signal::new(geo.clean(cfg, class, &mut clean_rng))?;
        let x = match &noise {
            Some(model) => s.add(&sample_isotropic_noise(&mut noise_rng, s.dim(), model))?,
            None => s.clone(),
        };
        noisy.push(x);
        clean.push(s);
        labels.push(class);
    }
    Ok(Dataset {
        noisy,
        labels,
        clean: CleanSignals(clean),
    })
}

/// Smooth per-class templates on the configured grid plus isotropic noise.
///
/// The geometry and the clean signals depend only on `rng`'s key, so runs at
/// different `sigma` share their clean data. Labels are assigned round-robin.
pub fn generate_synthetic(cfg: &ExperimentConfig, sigma: f64, rng: &RngStream) -> Result<SyntheticTask> {
    cfg.validate()?;
    let geo = Geometry::new(cfg, &mut rng.derive_named("geometry"));
    let train = draw_split(cfg, &geo, cfg.n_train, sigma, &rng.derive_named("train"))?;
    let test = draw_split(cfg, &geo, cfg.n_test, sigma, &rng.derive_named("test"))?;
    let warnings = separation_warning(&train).into_iter().collect();
    Ok(SyntheticTask { train, test, warnings })
}

/// Warns when two class means are closer than three times the mean
/// within-class spread.
fn separation_warning(data: &Dataset) -> Option<String> {
    let classes = data.labels.iter().max()? + 1;
    let clean = data.clean.for_evaluation();
    let dim = clean[0].dim();
    let mut means = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (s, &y) in clean.iter().zip(&data.labels) {
        counts[y] += 1;
        means[y].iter_mut().zip(s.iter()).for_each(|(m, v)| *m += v);
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let spread = (clean
        .iter()
        .zip(&data.labels)
        .map(|(s, &y)| dist(s.as_slice(), &means[y]).powi(2))
        .sum::<f64>()
        / clean.len() as f64)
        .sqrt();
    let mut closest = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            closest = closest.min(dist(&means[a], &means[b]));
        }
    }
    (closest < 3.0 * spread).then(|| {
        format!("class templates are close: nearest means {closest:.4} apart, within-class spread {spread:.4}")
    })
}
