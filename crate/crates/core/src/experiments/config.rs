use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::control::ControlShapes;
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::optimizer::{ModeRule, ModelKind, OptimizerConfig};
use crate::rom_spod::{AdjointForm, SpodBasisSource, SpodSettings};
use crate::transform::ShiftScheme;

use super::target::{Kink, TargetSpec};

/// Everything needed to set up and run one optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub l: f64,
    pub n: usize,
    pub t_final: f64,
    pub n_t: usize,
    pub v: f64,
    /// Number of Fourier harmonics; there are `2 xi + 1` control shapes.
    pub xi: usize,
    /// `y0(x) = exp(-(x - l/12)^2 / y0_width)`.
    pub y0_width: f64,
    pub target: TargetSpec,
    pub model: ModelKind,
    pub optimizer: OptimizerConfig,
    pub shift_scheme: ShiftScheme,
    pub adjoint: AdjointForm,
    pub basis_source: SpodBasisSource,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Write `singular_values_iter*.csv` at every refinement.
    pub write_spectra: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            l: 100.0,
            n: 3201,
            t_final: 136.2642,
            n_t: 2400,
            v: 0.55,
            xi: 20,
            y0_width: 1.0,
            target: TargetSpec::single_tilt(0.55, 0.0),
            model: ModelKind::Spod,
            optimizer: OptimizerConfig::default(),
            shift_scheme: ShiftScheme::default(),
            adjoint: AdjointForm::default(),
            basis_source: SpodBasisSource::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            write_spectra: true,
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::new(self.l, self.n, self.t_final, self.n_t, self.v)
    }

    pub fn shapes(&self, grid: &SpaceTimeGrid) -> ControlShapes {
        ControlShapes::fourier(grid, self.xi)
    }

    pub fn initial_condition(&self, grid: &SpaceTimeGrid) -> DiscreteField {
        let c = self.l / 12.0;
        grid.sample(|x| (-(x - c).powi(2) / self.y0_width).exp())
    }

    pub fn spod_settings(&self) -> SpodSettings {
        SpodSettings {
            rule: self.optimizer.mode_rule,
            scheme: self.shift_scheme,
            n_samples: self.optimizer.n_samples,
            adjoint: self.adjoint,
            source: self.basis_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.target.validate()?;
        self.optimizer.validate()?;
        if !(self.y0_width > 0.0 && self.y0_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "y0_width must be positive, got {}",
                self.y0_width
            )));
        }
        Ok(())
    }

    /// Text that [`parse_config_str`] maps back to `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let o = &self.optimizer;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("l", format!("{:?}", self.l));
        kv("n", self.n.to_string());
        kv("T", format!("{:?}", self.t_final));
        kv("n_t", self.n_t.to_string());
        kv("v", format!("{:?}", self.v));
        kv("xi", self.xi.to_string());
        kv("y0_width", format!("{:?}", self.y0_width));
        kv("tilt_factor", format!("{:?}", self.target.tilt_factor));
        kv("kinks", format_kinks(&self.target.kinks));
        kv("model", self.model.to_string());
        match o.mode_rule {
            ModeRule::Fixed(r) => kv("modes", r.to_string()),
            ModeRule::Tolerance(t) => kv("mode_tol", format!("{t:?}")),
        }
        kv("mu", format!("{:?}", o.mu));
        kv("beta", format!("{:?}", o.beta));
        kv("omega0", format!("{:?}", o.omega0));
        kv("n_iter", o.n_iter.to_string());
        kv("n_samples", o.n_samples.to_string());
        kv("refine_every", o.refine_every.to_string());
        kv("bb_switch", format!("{:?}", o.bb_switch_threshold));
        kv("shift_scheme", self.shift_scheme.to_string());
        kv("adjoint", self.adjoint.to_string());
        kv("basis", basis_name(self.basis_source).into());
        kv("out", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("spectra", self.write_spectra.to_string());
        s
    }
}

fn basis_name(source: SpodBasisSource) -> &'static str {
    match source {
        SpodBasisSource::Snapshots => "snapshots",
        SpodBasisSource::Eigenfunctions => "eigenfunctions",
    }
}

fn format_kinks(kinks: &[Kink]) -> String {
    if kinks.is_empty() {
        return "none".into();
    }
    kinks
        .iter()
        .map(|k| format!("{:?}:{:?}", k.fraction, k.velocity))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    match s {
        "fom" => Ok(ModelKind::Fom),
        "pod" => Ok(ModelKind::Pod),
        "spod" => Ok(ModelKind::Spod),
        other => Err(format!(
            "unknown model '{other}' (expected fom, pod or spod)"
        )),
    }
}

fn parse_kinks(s: &str) -> std::result::Result<Vec<Kink>, String> {
    if s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (f, v) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("kink '{}' must be fraction:velocity", item.trim()))?;
            Ok(Kink {
                fraction: num(f.trim())?,
                velocity: num(v.trim())?,
            })
        })
        .collect()
}

fn num<T: FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse()
        .map_err(|_| format!("'{s}' is not a valid number"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Preset {
    Single,
    Double,
    Uniform,
}

pub fn parse_config<P: AsRef<Path>>(path: P) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, path)
}

/// Parses `key = value` lines; `path` only labels error messages.
pub fn parse_config_str(text: &str, path: &Path) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    let mut preset = Preset::Single;
    let mut tilt = 0.0;
    let mut kinks = None;
    let mut horizon = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let err = |message: String| Error::Config {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        let o = &mut cfg.optimizer;
        let parsed: std::result::Result<(), String> = match key {
            "l" => num(value).map(|x| cfg.l = x),
            "n" => num(value).map(|x| cfg.n = x),
            "T" => num(value).map(|x| horizon = Some(Horizon::Final(x))),
            "cfl" => num(value).map(|x| horizon = Some(Horizon::Cfl(x))),
            "n_t" => num(value).map(|x| cfg.n_t = x),
            "v" => num(value).map(|x| cfg.v = x),
            "xi" => num(value).map(|x| cfg.xi = x),
            "y0_width" => num(value).map(|x| cfg.y0_width = x),
            "target" => match value {
                "single" => {
                    preset = Preset::Single;
                    Ok(())
                }
                "double" => {
                    preset = Preset::Double;
                    Ok(())
                }
                "none" => {
                    preset = Preset::Uniform;
                    Ok(())
                }
                other => Err(format!(
                    "unknown target '{other}' (expected single, double or none)"
                )),
            },
            "tilt_factor" => num(value).map(|x| tilt = x),
            "kinks" => parse_kinks(value).map(|k| kinks = Some(k)),
            "model" => parse_model(value).map(|m| cfg.model = m),
            "modes" => num(value).map(|r| o.mode_rule = ModeRule::Fixed(r)),
            "mode_tol" => num(value).map(|t| o.mode_rule = ModeRule::Tolerance(t)),
            "mu" => num(value).map(|x| o.mu = x),
            "beta" => num(value).map(|x| o.beta = x),
            "omega0" => num(value).map(|x| o.omega0 = x),
            "n_iter" => num(value).map(|x| o.n_iter = x),
            "n_samples" => num(value).map(|x| o.n_samples = x),
            "refine_every" => num(value).map(|x| o.refine_every = x),
            "bb_switch" => num(value).map(|x| o.bb_switch_threshold = x),
            "shift_scheme" => value.parse().map(|s| cfg.shift_scheme = s),
            "adjoint" => value.parse().map(|a| cfg.adjoint = a),
            "basis" => match value {
                "snapshots" => {
                    cfg.basis_source = SpodBasisSource::Snapshots;
                    Ok(())
                }
                "eigenfunctions" => {
                    cfg.basis_source = SpodBasisSource::Eigenfunctions;
                    Ok(())
                }
                other => Err(format!(
                    "unknown basis '{other}' (expected snapshots or eigenfunctions)"
                )),
            },
            "out" => {
                cfg.out_dir = PathBuf::from(value);
                Ok(())
            }
            "seed" => num(value).map(|x| cfg.seed = x),
            "spectra" => value
                .parse()
                .map(|b| cfg.write_spectra = b)
                .map_err(|_| format!("'{value}' is not a boolean")),
            other => Err(format!("unknown key '{other}'")),
        };
        parsed.map_err(err)?;
        if (key == "modes" && seen.contains(&"mode_tol"))
            || (key == "mode_tol" && seen.contains(&"modes"))
        {
            return Err(err("'modes' and 'mode_tol' are mutually exclusive".into()));
        }
        if (key == "T" && seen.contains(&"cfl")) || (key == "cfl" && seen.contains(&"T")) {
            return Err(err("'T' and 'cfl' are mutually exclusive".into()));
        }
        seen.push(key);
    }

    match horizon {
        Some(Horizon::Final(t)) => cfg.t_final = t,
        Some(Horizon::Cfl(c)) => {
            let g = SpaceTimeGrid::with_cfl(cfg.l, cfg.n, cfg.n_t, cfg.v, c).map_err(|e| {
                Error::Config {
                    path: path.to_path_buf(),
                    line: last_line,
                    message: e.to_string(),
                }
            })?;
            cfg.t_final = g.t_final();
        }
        None => {}
    }
    cfg.target = match kinks {
        Some(k) => TargetSpec {
            kinks: k,
            tilt_factor: tilt,
        },
        None => match preset {
            Preset::Single => TargetSpec::single_tilt(cfg.v, tilt),
            Preset::Double => TargetSpec::double_tilt(cfg.v, tilt),
            Preset::Uniform => TargetSpec::uniform(),
        },
    };
    cfg.validate().map_err(|e| Error::Config {
        path: path.to_path_buf(),
        line: last_line,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

#[derive(Clone, Copy)]
enum Horizon {
    Final(f64),
    Cfl(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        parse_config_str(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(
            (c.l, c.n, c.t_final, c.n_t, c.v, c.xi),
            (100.0, 3201, 136.2642, 2400, 0.55, 20)
        );
        let o = &c.optimizer;
        assert_eq!(
            (o.mu, o.beta, o.omega0, o.n_iter, o.n_samples),
            (1e-3, 1e-5, 1.0, 20000, 800)
        );
        assert_eq!(c, ScenarioConfig::default());
    }

    #[test]
    fn fixed_mode_spod() {
        let c = parse("model = spod\nmodes = 35  # fixed\n").unwrap();
        assert_eq!(c.model, ModelKind::Spod);
        assert_eq!(c.optimizer.mode_rule, ModeRule::Fixed(35));
    }

    #[test]
    fn tolerance_rule() {
        let c = parse("# tolerance study\nmode_tol = 1e-5\n").unwrap();
        assert_eq!(c.optimizer.mode_rule, ModeRule::Tolerance(1e-5));
    }

    #[test]
    fn unknown_key_reports_line() {
        match parse("n = 101\n\nfoo = 1\n") {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("foo"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_values_report_line() {
        for (text, line) in [
            ("n = abc", 1),
            ("\nmodel = rom", 2),
            ("modes = 5\nmode_tol = 1e-3", 2),
            ("n\n", 1),
            ("n = 1\nn = 2", 2),
        ] {
            match parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
        assert!(matches!(
            parse("kinks = 0.75:0, 0.25:0"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn cfl_sets_horizon() {
        let c = parse("n = 401\nn_t = 300\ncfl = 1\n").unwrap();
        assert!((c.grid().unwrap().cfl() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn presets_and_explicit_kinks() {
        let c = parse("target = double\ntilt_factor = 0.5\n").unwrap();
        assert_eq!(c.target, TargetSpec::double_tilt(0.55, 0.5));
        let c = parse("kinks = 0.5:0.1\n").unwrap();
        assert_eq!(
            c.target.kinks,
            vec![Kink {
                fraction: 0.5,
                velocity: 0.1
            }]
        );
        assert!(parse("target = none").unwrap().target.kinks.is_empty());
    }

    #[test]
    fn config_string_round_trips() {
        let mut c = parse("model = pod\nmode_tol = 1e-4\ntarget = double\ntilt_factor = 0.3\nshift_scheme = interpolated\nadjoint = discrete\nbasis = eigenfunctions\nseed = 9\nspectra = false\nout = runs/a b").unwrap();
        c.t_final = 1.0 / 3.0;
        assert_eq!(parse(&c.to_config_string()).unwrap(), c);
    }
}
