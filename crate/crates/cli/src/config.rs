//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, repeated keys and
//! unparsable values are errors that name the file and line. Relative paths
//! resolve against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use adbn_core::dataset::ClassTable;
use adbn_core::detection::{DetectConfig, SizeGrid};
use adbn_core::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub model: PathBuf,
    pub output_dir: PathBuf,
    pub n_classes: usize,
    pub train: TrainConfig,
    pub detect: DetectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            model: PathBuf::from("model.adbn"),
            output_dir: PathBuf::from("out"),
            n_classes: 9,
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "data_dir",
    "model",
    "output_dir",
    "seed",
    "n_classes",
    "learning_rate",
    "finetune_learning_rate",
    "batch_size",
    "epochs_per_layer",
    "finetune_epochs",
    "initial_hidden",
    "cd_k",
    "theta_g",
    "theta_a",
    "theta_l1",
    "theta_l2",
    "max_hidden",
    "max_layers",
    "window",
    "inherit_noise",
    "regions",
    "t1",
    "t2",
    "size_grid",
    "size_widths",
    "size_heights",
    "background",
    "merge",
];

fn parse<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value.split(',').map(|v| parse(v.trim())).collect()
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, path, base)
    }

    /// `origin` labels error messages; `base` anchors relative paths.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut grid_kind = "region".to_string();
        let mut widths: Option<Vec<f64>> = None;
        let mut heights: Option<Vec<f64>> = None;
        let mut background: Option<String> = None;

        for (n, raw) in text.lines().enumerate() {
            let err = |message: String| CliError::Config {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = *KEYS
                .iter()
                .find(|&&k| k == key)
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            if seen.contains(&key) {
                return Err(err(format!("key {key:?} given twice")));
            }
            seen.push(key);
            let path = || base.join(value);
            let result = match key {
                "data_dir" => {
                    cfg.data_dir = Some(path());
                    Ok(())
                }
                "model" => {
                    cfg.model = path();
                    Ok(())
                }
                "output_dir" => {
                    cfg.output_dir = path();
                    Ok(())
                }
                "seed" => parse(value).map(|v| cfg.train.seed = v),
                "n_classes" => parse(value).map(|v| cfg.n_classes = v),
                "learning_rate" => parse(value).map(|v| cfg.train.learning_rate = v),
                "finetune_learning_rate" => {
                    parse(value).map(|v| cfg.train.finetune_learning_rate = v)
                }
                "batch_size" => parse(value).map(|v| cfg.train.batch_size = v),
                "epochs_per_layer" => parse(value).map(|v| cfg.train.epochs_per_layer = v),
                "finetune_epochs" => parse(value).map(|v| cfg.train.finetune_epochs = v),
                "initial_hidden" => parse(value).map(|v| cfg.train.initial_hidden = v),
                "cd_k" => parse(value).map(|v| cfg.train.cd_k = v),
                "theta_g" => parse(value).map(|v| cfg.train.adaptive.theta_g = v),
                "theta_a" => parse(value).map(|v| cfg.train.adaptive.theta_a = v),
                "theta_l1" => parse(value).map(|v| cfg.train.adaptive.theta_l1 = v),
                "theta_l2" => parse(value).map(|v| cfg.train.adaptive.theta_l2 = v),
                "max_hidden" => parse(value).map(|v| cfg.train.adaptive.max_hidden = v),
                "max_layers" => parse(value).map(|v| cfg.train.adaptive.max_layers = v),
                "window" => parse(value).map(|v| cfg.train.adaptive.window = v),
                "inherit_noise" => parse(value).map(|v| cfg.train.adaptive.inherit_noise = v),
                "regions" => parse(value).map(|v| cfg.detect.regions = v),
                "t1" => parse(value).map(|v| cfg.detect.t1 = v),
                "t2" => parse(value).map(|v| cfg.detect.t2 = v),
                "size_grid" => match value {
                    "region" | "image" => {
                        grid_kind = value.to_string();
                        Ok(())
                    }
                    _ => Err(format!("expected region or image, got {value:?}")),
                },
                "size_widths" => parse_list(value).map(|v| widths = Some(v)),
                "size_heights" => parse_list(value).map(|v| heights = Some(v)),
                "background" => {
                    background = Some(value.to_string());
                    Ok(())
                }
                "merge" => parse_bool(value).map(|v| cfg.detect.merge = v),
                _ => unreachable!("key list and match arms agree"),
            };
            result.map_err(err)?;
        }

        let (dw, dh) = match &cfg.detect.sizes {
            SizeGrid::RegionRelative { widths, heights }
            | SizeGrid::ImageRelative { widths, heights } => (widths.clone(), heights.clone()),
        };
        let (w, h) = (widths.unwrap_or(dw), heights.unwrap_or(dh));
        cfg.detect.sizes = if grid_kind == "image" {
            SizeGrid::ImageRelative {
                widths: w,
                heights: h,
            }
        } else {
            SizeGrid::RegionRelative {
                widths: w,
                heights: h,
            }
        };

        let whole = |message: String| CliError::ConfigValue {
            path: origin.to_path_buf(),
            message,
        };
        let classes = cfg.classes().map_err(|e| whole(e.to_string()))?;
        cfg.detect.background = match background.as_deref() {
            None => cfg.detect.background,
            Some("none") => None,
            Some(name) => Some(classes.id(name).ok_or_else(|| {
                whole(format!(
                    "background class {name:?} is not one of {:?}",
                    classes.names()
                ))
            })?),
        };
        cfg.train.validate().map_err(|e| whole(e.to_string()))?;
        cfg.detect.validate().map_err(|e| whole(e.to_string()))?;
        Ok(cfg)
    }

    pub fn classes(&self) -> adbn_core::Result<ClassTable> {
        ClassTable::cxr8_prefix(self.n_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, Path::new("run.cfg"), Path::new("/base"))
    }

    #[test]
    fn empty_config_keeps_defaults() {
        let cfg = parse_str("# nothing\n\n").unwrap();
        assert_eq!(cfg.train.learning_rate, 0.005);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.train.initial_hidden, 400);
        assert_eq!(cfg.train.adaptive.theta_g, 0.001);
        assert_eq!(cfg.train.adaptive.theta_a, 0.1);
        assert_eq!(cfg.train.adaptive.theta_l1, 0.05);
        assert_eq!(cfg.train.adaptive.theta_l2, 0.05);
        assert_eq!((cfg.detect.t1, cfg.detect.t2), (0.5, 0.9));
    }

    #[test]
    fn values_and_paths_are_read() {
        let cfg = parse_str(
            "data_dir = data/train  # trailing comment\nseed=7\nt2 = 0.7\nsize_grid = image\nsize_widths = 0.5, 0.75\nbackground = none\nmerge = true\n",
        )
        .unwrap();
        assert_eq!(cfg.data_dir, Some(PathBuf::from("/base/data/train")));
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.detect.t2, 0.7);
        assert_eq!(cfg.detect.background, None);
        assert!(cfg.detect.merge);
        match cfg.detect.sizes {
            SizeGrid::ImageRelative { widths, heights } => {
                assert_eq!(widths, vec![0.5, 0.75]);
                assert_eq!(heights, vec![1.5, 2.0, 2.5, 3.0]);
            }
            other => panic!("{other:?}"),
        }
        let cfg = parse_str("background = Mass").unwrap();
        assert_eq!(cfg.detect.background, Some(1));
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_str("seed = 1\n\nthresh = 3\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("run.cfg:3") && e.contains("thresh"), "{e}");
        let e = parse_str("seed = x").unwrap_err().to_string();
        assert!(e.contains("run.cfg:1"), "{e}");
        let e = parse_str("seed = 1\nseed = 2").unwrap_err().to_string();
        assert!(e.contains("run.cfg:2"), "{e}");
        assert!(parse_str("no equals sign").is_err());
        assert!(parse_str("t1 = 0.95").is_err());
        assert!(parse_str("background = Flu").is_err());
        assert!(parse_str("n_classes = 12").is_err());
    }
}
