//! Scenario configuration (TOML), the two built-in presets, and assembly of
//! a [`ForwardOperator`] plus synthetic data from a configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::mesh::{ControlSpace, Mesh, Rect};
use crate::observation::{
    add_noise_cosine, add_noise_gaussian, Observation, ObservationGeometry, ObservationOperator,
};
use crate::pdps::{ControlGeometry, PdpsParams, StepSizes};
use crate::prox::MultiBangLevels;
use crate::source::{Amplitude, ForcingSpec, Placement, PointSource};
use crate::stepper::{InitialField, TimeGrid, WaveProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub final_time: f64,
    pub steps: usize,
    pub sigma: f64,
    #[serde(default = "yes")]
    pub cfl_guard: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub region: Rect,
    /// Constant background coefficient `u_hat`.
    pub background: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBox {
    pub region: Rect,
    pub value: f64,
}

/// Piecewise constant control `u_e - u_hat`: `value` on each box, zero elsewhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactCoefficient {
    #[serde(default)]
    pub boxes: Vec<CoefficientBox>,
}

impl ExactCoefficient {
    /// Value at a point; boxes are closed and the first match wins.
    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.boxes
            .iter()
            .find(|b| b.region.contains_closed(p, 1e-12))
            .map_or(0.0, |b| b.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// `o + level ||o||_inf xi`
    Gaussian { level: f64 },
    /// Per-series cosine sums scaled to `delta` times the series maximum.
    Cosine { delta: f64, terms: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub domain: Rect,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub control: ControlConfig,
    pub observation: ObservationGeometry,
    pub forcing: ForcingSpec,
    pub exact: ExactCoefficient,
    pub noise: NoiseModel,
    pub solver: PdpsParams,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            context: "scenario configuration".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    /// Hash of the sections that determine the synthetic data, so solver
    /// settings can change without invalidating a data set.
    pub fn data_hash(&self) -> String {
        let mut value = toml::Table::try_from(self).expect("config serializes to a table");
        value.remove("name");
        value.remove("solver");
        hex_digest(value.to_string().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.mesh.nx < 2 || self.mesh.ny < 2 {
            return Err(Error::TooFewNodes {
                nx: self.mesh.nx,
                ny: self.mesh.ny,
            });
        }
        TimeGrid::new(self.time.final_time, self.time.steps)?;
        if !(self.time.sigma >= 0.0 && self.time.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.time.sigma)));
        }
        if !(self.control.background > 0.0 && self.control.background.is_finite()) {
            return Err(Error::Config(format!(
                "background coefficient must be positive, got {}",
                self.control.background
            )));
        }
        self.solver.validate()?;
        let lowest = self.control.background + self.solver.levels.min();
        if lowest <= 0.0 {
            return Err(Error::Config(format!(
                "background plus lowest level must be positive, got {lowest}"
            )));
        }
        match self.noise {
            NoiseModel::Gaussian { level } if !(level >= 0.0 && level.is_finite()) => {
                return Err(Error::Config(format!("noise level must be >= 0, got {level}")));
            }
            NoiseModel::Cosine { delta, .. } if !(0.0..=1.0).contains(&delta) => {
                return Err(Error::Config(format!("delta must lie in [0, 1], got {delta}")));
            }
            NoiseModel::Cosine { .. } if !matches!(self.observation, ObservationGeometry::PatchMean { .. }) => {
                return Err(Error::Config("cosine noise requires patch-mean observations".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn with_resolution(mut self, nx: usize, ny: usize, steps: usize) -> Self {
        self.mesh = MeshConfig { nx, ny };
        self.time.steps = steps;
        self
    }

    /// Transmission setup: sources below the control strip, restriction
    /// observation above it.
    pub fn transmission() -> Self {
        let wavelet = Amplitude::Ricker {
            a: 2.0,
            h: 5.0,
            t0: 0.1,
        };
        let mut sources = Vec::with_capacity(38);
        for i in -9..=9 {
            // Integer ratios keep the coordinates exact decimals in TOML.
            let x = i as f64 / 10.0;
            for location in [[x, -0.9], [(2 * i + 1) as f64 / 20.0, -0.8]] {
                sources.push(PointSource {
                    location,
                    placement: Placement::Interior,
                    amplitude: wavelet,
                });
            }
        }
        let b = |x0, x1, y0, y1, value| CoefficientBox {
            region: Rect::new(x0, x1, y0, y1),
            value,
        };
        Self {
            name: "transmission".into(),
            seed: 20_190_601,
            domain: Rect::new(-1.0, 1.0, -1.0, 2.0),
            mesh: MeshConfig { nx: 64, ny: 64 },
            time: TimeConfig {
                final_time: 3.0,
                steps: 128,
                sigma: 0.25,
                cfl_guard: true,
            },
            control: ControlConfig {
                region: Rect::new(-1.0, 1.0, 0.0, 1.0),
                background: 1.0,
            },
            observation: ObservationGeometry::Restriction {
                region: Rect::new(-1.0, 1.0, 1.0, 2.0),
            },
            forcing: ForcingSpec { sources },
            exact: ExactCoefficient {
                boxes: vec![
                    b(-0.8, -0.4, 0.2, 0.8, 0.4),
                    b(-0.2, 0.3, 0.1, 0.4, 0.1),
                    b(-0.1, 0.5, 0.55, 0.9, 0.3),
                    b(0.6, 0.9, 0.15, 0.5, 0.2),
                ],
            },
            noise: NoiseModel::Gaussian { level: 0.1 },
            solver: PdpsParams {
                alpha: 1e-5,
                beta: 1e-4,
                levels: MultiBangLevels::new((0..5).map(|i| i as f64 / 10.0).collect())
                    .expect("static levels"),
                steps: StepSizes {
                    gamma_f: 0.1,
                    gamma_g: 1e3,
                },
                geometry: ControlGeometry::Euclidean,
                tol: 1e-6,
                max_iter: 20_000,
                check_every: 10,
            },
        }
    }

    /// Reflection setup: surface sources, patch-mean observations near the
    /// surface, three buried boxes.
    pub fn reflection() -> Self {
        let sources = (0..=20)
            .map(|k| PointSource {
                location: [(k - 10) as f64 / 10.0, 1.0],
                placement: Placement::Boundary,
                amplitude: Amplitude::Ricker {
                    a: 2.0,
                    h: 5.0,
                    t0: 0.1,
                },
            })
            .collect();
        let patches = (0..10)
            .map(|i| {
                let o = 2 * i - 10;
                Rect::new(o as f64 / 10.0, (o + 2) as f64 / 10.0, 0.8, 1.0)
            })
            .collect();
        let b = |x0, x1, y0, y1, value| CoefficientBox {
            region: Rect::new(x0, x1, y0, y1),
            value,
        };
        Self {
            name: "reflection".into(),
            seed: 20_190_602,
            domain: Rect::new(-1.0, 1.0, -1.0, 1.0),
            mesh: MeshConfig { nx: 129, ny: 129 },
            time: TimeConfig {
                final_time: 3.0,
                steps: 129,
                sigma: 0.25,
                cfl_guard: true,
            },
            control: ControlConfig {
                region: Rect::new(-1.0, 1.0, -1.0, 0.7),
                background: 1.0,
            },
            observation: ObservationGeometry::PatchMean { patches },
            forcing: ForcingSpec { sources },
            exact: ExactCoefficient {
                boxes: vec![
                    b(0.4, 0.6, 0.1, 0.4, 3.0),
                    b(-0.8, -0.5, 0.2, 0.6, 2.0),
                    b(-0.2, 0.2, 0.3, 0.5, 1.0),
                ],
            },
            noise: NoiseModel::Cosine {
                delta: 0.05,
                terms: 10,
            },
            solver: PdpsParams {
                alpha: 0.0,
                beta: 1e-4,
                levels: MultiBangLevels::new(vec![0.0, 1.0, 2.0, 3.0]).expect("static levels"),
                steps: StepSizes {
                    gamma_f: 0.1,
                    gamma_g: 1e3,
                },
                geometry: ControlGeometry::Euclidean,
                tol: 1e-4,
                max_iter: 20_000,
                check_every: 10,
            },
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "transmission" => Some(Self::transmission()),
            "reflection" => Some(Self::reflection()),
            _ => None,
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A configured problem ready for forward solves and inversion.
#[derive(Debug)]
pub struct Scenario {
    config: ScenarioConfig,
    op: ForwardOperator,
}

/// Synthetic measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub exact_control: Vec<f64>,
    pub clean: Observation,
    pub noisy: Observation,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mesh = Mesh::rectangle(config.domain, config.mesh.nx, config.mesh.ny)?;
        let grid = TimeGrid::new(config.time.final_time, config.time.steps)?;
        let control = ControlSpace::new(&mesh, config.control.region)?;
        if control.dim() == 0 {
            return Err(Error::Config("control region contains no mesh nodes".into()));
        }
        let observation = ObservationOperator::new(&mesh, grid, &config.observation)?;
        let offset = vec![config.control.background; mesh.num_nodes()];
        let mut problem = WaveProblem::new(
            mesh,
            grid,
            config.time.sigma,
            &config.forcing,
            &InitialField::Zero,
            &InitialField::Zero,
        )?;
        if !config.time.cfl_guard {
            problem = problem.without_cfl_guard();
        }
        let op = ForwardOperator::new(problem, control, offset, observation)?;
        Ok(Self {
            config: config.clone(),
            op,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.op
    }

    /// Nodal values of the exact control on the control degrees of freedom.
    pub fn exact_control(&self) -> Vec<f64> {
        let mesh = self.op.mesh();
        self.op
            .control()
            .nodes()
            .iter()
            .map(|&n| self.config.exact.value_at(mesh.node(n)))
            .collect()
    }

    /// `S(u_e)` and its noisy version, seeded by the configuration.
    pub fn generate_data(&self) -> Result<SyntheticData> {
        let exact_control = self.exact_control();
        let clean = self.op.apply_s(&exact_control)?;
        let noisy = match self.config.noise {
            NoiseModel::None => clean.clone(),
            NoiseModel::Gaussian { level } => add_noise_gaussian(&clean, level, self.config.seed)?,
            NoiseModel::Cosine { delta, terms } => add_noise_cosine(
                &clean,
                self.op.observation().grid(),
                delta,
                terms,
                self.config.seed,
            )?,
        };
        Ok(SyntheticData {
            exact_control,
            clean,
            noisy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_hash_ignores_solver_settings() {
        let a = ScenarioConfig::reflection();
        let mut b = a.clone();
        b.solver.max_iter = 7;
        b.solver.tol = 1.0;
        b.name = "other".into();
        assert_eq!(a.data_hash(), b.data_hash());
        assert_ne!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.data_hash(), b.data_hash());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [ScenarioConfig::transmission(), ScenarioConfig::reflection()] {
            let text = cfg.to_toml();
            let back = ScenarioConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert_ne!(
            ScenarioConfig::transmission().hash(),
            ScenarioConfig::reflection().hash()
        );
    }

    #[test]
    fn preset_geometry() {
        let t = ScenarioConfig::transmission();
        assert_eq!(t.forcing.sources.len(), 38);
        let r = ScenarioConfig::reflection();
        assert_eq!(r.forcing.sources.len(), 21);
        match &r.observation {
            ObservationGeometry::PatchMean { patches } => assert_eq!(patches.len(), 10),
            _ => panic!("reflection observes patch means"),
        }
        assert_eq!(r.exact.value_at([0.5, 0.2]), 3.0);
        assert_eq!(r.exact.value_at([-0.6, 0.5]), 2.0);
        assert_eq!(r.exact.value_at([0.0, 0.4]), 1.0);
        assert_eq!(r.exact.value_at([0.0, -0.4]), 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ScenarioConfig::transmission();
        c.solver.steps.gamma_f = 0.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::transmission();
        c.noise = NoiseModel::Cosine {
            delta: 0.1,
            terms: 10,
        };
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::reflection();
        c.control.background = -1.0;
        assert!(c.validate().is_err());
        let text = ScenarioConfig::transmission().to_toml().replace("seed", "sede");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(Error::Parse { .. })));
        let text = ScenarioConfig::transmission()
            .to_toml()
            .replace("levels = [0.0, 0.1", "levels = [0.2, 0.1");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn small_scenarios_build_and_generate_data() {
        for cfg in [
            ScenarioConfig::transmission().with_resolution(9, 10, 8),
            ScenarioConfig::reflection().with_resolution(9, 9, 8),
        ] {
            let s = Scenario::build(&cfg).unwrap();
            let a = s.generate_data().unwrap();
            let b = s.generate_data().unwrap();
            assert_eq!(a, b);
            assert!(a.clean.max_abs() > 0.0);
            assert_ne!(a.clean, a.noisy);
        }
    }
}
