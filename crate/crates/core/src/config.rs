//! Sectioned key-value run configuration.
//!
//! ```text
//! [run]
//! task = classification
//! seed = 7
//!
//! [mix]
//! mix_prob = 0.5
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored. A run config is
//! resolved as defaults for the task, then the file, then `section.key=value`
//! overrides. [`to_config_string`] writes every setting back out, and
//! resolving that text again gives the same [`RunConfig`].

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::Lesion;
use crate::error::{Error, Result};
use crate::model_zoo::{ModelSpec, Task};
use crate::training::RunConfig;

/// Name of the effective config echoed into a run directory.
pub const CONFIG_FILE: &str = "config.cfg";

const RUN_KEYS: &[&str] = &["name", "task", "seed", "data", "lesion", "folds", "folds_file", "val_fraction"];
const MODEL_KEYS: &[&str] = &[
    "arch",
    "encoder",
    "num_outputs",
    "input_size",
    "in_channels",
    "pretrain_source",
    "pretrained",
    "strict_head",
];
const TRAIN_KEYS: &[&str] = &[
    "schedule",
    "lr0",
    "epochs",
    "optimizer",
    "batch_size",
    "loss",
    "selection_metric",
    "label_smoothing",
];
const MIX_KEYS: &[&str] = &["alpha1", "alpha2", "mix_prob", "cutmix_share", "per_sample_lambda"];
const AUGMENT_KEYS: &[&str] = &[
    "color_jitter",
    "jitter_strength",
    "noise_sigma",
    "hflip",
    "rotate",
    "random_crop",
    "perspective",
];

/// Known sections and their keys, in echo order.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("run", RUN_KEYS),
    ("model", MODEL_KEYS),
    ("train", TRAIN_KEYS),
    ("mix", MIX_KEYS),
    ("augment", AUGMENT_KEYS),
];

const SEG_ONLY: &[(&str, &str)] = &[("run", "lesion"), ("run", "val_fraction"), ("train", "loss")];
const CLS_ONLY: &[(&str, &str)] = &[("run", "folds"), ("run", "folds_file"), ("train", "label_smoothing")];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    /// Where the value came from: a file name or `override`.
    pub source: String,
    pub line: usize,
}

/// Parsed config text; keys are not interpreted until [`resolve`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigDoc {
    entries: Vec<Entry>,
}

impl ConfigDoc {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut doc = ConfigDoc::default();
        let mut section: Option<String> = None;
        let mut seen_sections: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(Error::parse(source_name, line_no, "unterminated section header"));
                };
                let name = name.trim().to_ascii_lowercase();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(Error::parse(
                        source_name,
                        line_no,
                        format!("unknown section [{name}] (expected run, model, train, mix or augment)"),
                    ));
                }
                if seen_sections.contains(&name) {
                    return Err(Error::parse(source_name, line_no, format!("section [{name}] appears twice")));
                }
                seen_sections.push(name.clone());
                section = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(source_name, line_no, "expected `key = value`"));
            };
            let Some(section) = &section else {
                return Err(Error::parse(source_name, line_no, "setting outside of a [section]"));
            };
            let key = key.trim().to_ascii_lowercase();
            check_key(section, &key).map_err(|msg| Error::parse(source_name, line_no, msg))?;
            if doc.get(section, &key).is_some() {
                return Err(Error::parse(source_name, line_no, format!("`{section}.{key}` set twice")));
            }
            doc.entries.push(Entry {
                section: section.clone(),
                key,
                value: value.trim().to_string(),
                source: source_name.to_string(),
                line: line_no,
            });
        }
        Ok(doc)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.section == section && e.key == key)
    }

    /// Sets or replaces one value.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let section = section.trim().to_ascii_lowercase();
        let key = key.trim().to_ascii_lowercase();
        check_key(&section, &key).map_err(Error::invalid)?;
        let entry = Entry {
            section: section.clone(),
            key: key.clone(),
            value: value.trim().to_string(),
            source: "override".into(),
            line: 0,
        };
        match self.entries.iter_mut().find(|e| e.section == section && e.key == key) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
        Ok(())
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{spec}` is not `section.key=value`")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::invalid(format!("override `{spec}` is not `section.key=value`")))?;
        self.set(section, key, value)
    }
}

fn check_key(section: &str, key: &str) -> std::result::Result<(), String> {
    let keys = SCHEMA
        .iter()
        .find(|(s, _)| *s == section)
        .map(|(_, k)| *k)
        .ok_or_else(|| format!("unknown section `{section}`"))?;
    if keys.contains(&key) {
        Ok(())
    } else {
        Err(format!("unknown key `{key}` in [{section}] (expected one of: {})", keys.join(", ")))
    }
}

fn value<T>(e: &Entry) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| Error::parse(&e.source, e.line, format!("{}.{}: {err}", e.section, e.key)))
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(Error::parse(
            &e.source,
            e.line,
            format!("{}.{}: `{other}` is not on/off", e.section, e.key),
        )),
    }
}

fn optional_f64(e: &Entry) -> Result<Option<f64>> {
    if e.value.eq_ignore_ascii_case("off") || e.value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        value::<f64>(e).map(Some)
    }
}

fn optional_string(e: &Entry) -> Option<String> {
    (!e.value.is_empty()).then(|| e.value.clone())
}

/// Resolves a run config. `task` comes from the command being run; a
/// `run.task` in the document must agree with it.
pub fn resolve(doc: &ConfigDoc, task: Option<Task>) -> Result<RunConfig> {
    let task = match (doc.get("run", "task"), task) {
        (Some(e), hint) => {
            let t: Task = value(e)?;
            if hint.is_some_and(|h| h != t) {
                return Err(Error::parse(
                    &e.source,
                    e.line,
                    format!("config is for {t} but the command trains {}", hint.unwrap()),
                ));
            }
            t
        }
        (None, Some(t)) => t,
        (None, None) => return Err(Error::invalid("run.task is not set")),
    };
    let off_task: &[(&str, &str)] = match task {
        Task::Segmentation => CLS_ONLY,
        Task::Classification => SEG_ONLY,
    };
    for e in &doc.entries {
        let misplaced = off_task.contains(&(e.section.as_str(), e.key.as_str()))
            || (task == Task::Segmentation && e.section == "mix");
        if misplaced {
            return Err(Error::parse(
                &e.source,
                e.line,
                format!("`{}.{}` does not apply to {task} runs", e.section, e.key),
            ));
        }
    }

    let mut cfg = RunConfig::defaults(task);
    let get = |s: &str, k: &str| doc.get(s, k);

    if let Some(e) = get("run", "name") {
        cfg.name = e.value.clone();
    }
    if let Some(e) = get("run", "seed") {
        cfg.seed = value(e)?;
    }
    if let Some(e) = get("run", "data") {
        cfg.data = PathBuf::from(&e.value);
    }
    if let Some(e) = get("run", "lesion") {
        cfg.lesion = optional_string(e).map(|s| s.parse::<Lesion>()).transpose().map_err(|err| {
            Error::parse(&e.source, e.line, format!("run.lesion: {err}"))
        })?;
    }
    if let Some(e) = get("run", "folds") {
        cfg.folds = value(e)?;
    }
    if let Some(e) = get("run", "folds_file") {
        cfg.folds_file = optional_string(e).map(PathBuf::from);
    }
    if let Some(e) = get("run", "val_fraction") {
        cfg.val_fraction = value(e)?;
    }

    let num_outputs = match get("model", "num_outputs") {
        Some(e) => value(e)?,
        None => cfg.model.num_outputs,
    };
    if let Some(e) = get("model", "arch") {
        cfg.model = ModelSpec::new(task, &e.value, num_outputs)
            .map_err(|err| Error::parse(&e.source, e.line, format!("model.arch: {err}")))?;
    } else {
        cfg.model.num_outputs = num_outputs;
    }
    if let Some(e) = get("model", "encoder") {
        cfg.model.encoder = optional_string(e);
    }
    if let Some(e) = get("model", "input_size") {
        cfg.model.input_size = value(e)?;
    }
    if let Some(e) = get("model", "in_channels") {
        cfg.model.in_channels = value(e)?;
    }
    if let Some(e) = get("model", "pretrain_source") {
        cfg.model.pretrain_source = value(e)?;
    }
    if let Some(e) = get("model", "pretrained") {
        cfg.pretrained = optional_string(e).map(PathBuf::from);
    }
    if let Some(e) = get("model", "strict_head") {
        cfg.strict_head = flag(e)?;
    }

    if let Some(e) = get("train", "schedule") {
        cfg.schedule.kind = value(e)?;
    }
    if let Some(e) = get("train", "lr0") {
        cfg.schedule.lr0 = value(e)?;
    }
    if let Some(e) = get("train", "epochs") {
        cfg.schedule.total_epochs = value(e)?;
    }
    if let Some(e) = get("train", "optimizer") {
        cfg.optimizer = value(e)?;
    }
    if let Some(e) = get("train", "batch_size") {
        cfg.batch_size = value(e)?;
    }
    if let Some(e) = get("train", "loss") {
        cfg.loss = value(e)?;
    }
    if let Some(e) = get("train", "selection_metric") {
        cfg.selection_metric = value(e)?;
    }
    if let Some(e) = get("train", "label_smoothing") {
        cfg.label_smoothing = value(e)?;
    }

    if let Some(e) = get("mix", "alpha1") {
        cfg.mix.alpha1 = value(e)?;
    }
    if let Some(e) = get("mix", "alpha2") {
        cfg.mix.alpha2 = value(e)?;
    }
    if let Some(e) = get("mix", "mix_prob") {
        cfg.mix.mix_prob = value(e)?;
    }
    if let Some(e) = get("mix", "cutmix_share") {
        cfg.mix.cutmix_share = value(e)?;
    }
    if let Some(e) = get("mix", "per_sample_lambda") {
        cfg.mix.per_sample_lambda = flag(e)?;
    }

    if let Some(e) = get("augment", "color_jitter") {
        cfg.augment.color_jitter = flag(e)?;
    }
    if let Some(e) = get("augment", "jitter_strength") {
        cfg.augment.jitter_strength = value(e)?;
    }
    if let Some(e) = get("augment", "noise_sigma") {
        cfg.augment.noise_sigma = value(e)?;
    }
    if let Some(e) = get("augment", "hflip") {
        cfg.augment.geometric.hflip = flag(e)?;
    }
    if let Some(e) = get("augment", "rotate") {
        cfg.augment.geometric.rotate = optional_f64(e)?;
    }
    if let Some(e) = get("augment", "random_crop") {
        cfg.augment.geometric.random_crop = optional_f64(e)?;
    }
    if let Some(e) = get("augment", "perspective") {
        cfg.augment.geometric.perspective = optional_f64(e)?;
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Parses `text`, applies `overrides` and resolves.
pub fn load_run_config(text: &str, source_name: &str, task: Option<Task>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = ConfigDoc::parse(text, source_name)?;
    for o in overrides {
        doc.apply_override(o)?;
    }
    resolve(&doc, task)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "off".to_string(), |x| x.to_string())
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Canonical text of `cfg` with every applicable setting spelled out.
pub fn to_config_string(cfg: &RunConfig) -> String {
    let seg = cfg.task == Task::Segmentation;
    let m = &cfg.model;
    let a = &cfg.augment;
    let mut sections: Vec<(&str, Vec<(&str, String)>)> = Vec::new();

    let mut run = vec![
        ("name", cfg.name.clone()),
        ("task", cfg.task.to_string()),
        ("seed", cfg.seed.to_string()),
        ("data", cfg.data.display().to_string()),
    ];
    if seg {
        run.push(("lesion", cfg.lesion.map(|l| l.to_string()).unwrap_or_default()));
        run.push(("val_fraction", cfg.val_fraction.to_string()));
    } else {
        run.push(("folds", cfg.folds.to_string()));
        run.push(("folds_file", opt_path(&cfg.folds_file)));
    }
    sections.push(("run", run));

    sections.push((
        "model",
        vec![
            ("arch", m.arch.clone()),
            ("encoder", m.encoder.clone().unwrap_or_default()),
            ("num_outputs", m.num_outputs.to_string()),
            ("input_size", m.input_size.to_string()),
            ("in_channels", m.in_channels.to_string()),
            ("pretrain_source", m.pretrain_source.to_string()),
            ("pretrained", opt_path(&cfg.pretrained)),
            ("strict_head", on_off(cfg.strict_head).into()),
        ],
    ));

    let mut train = vec![
        ("schedule", cfg.schedule.kind.to_string()),
        ("lr0", cfg.schedule.lr0.to_string()),
        ("epochs", cfg.schedule.total_epochs.to_string()),
        ("optimizer", cfg.optimizer.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
    ];
    if seg {
        train.push(("loss", cfg.loss.to_string()));
    }
    train.push(("selection_metric", cfg.selection_metric.to_string()));
    if !seg {
        train.push(("label_smoothing", cfg.label_smoothing.to_string()));
    }
    sections.push(("train", train));

    if !seg {
        sections.push((
            "mix",
            vec![
                ("alpha1", cfg.mix.alpha1.to_string()),
                ("alpha2", cfg.mix.alpha2.to_string()),
                ("mix_prob", cfg.mix.mix_prob.to_string()),
                ("cutmix_share", cfg.mix.cutmix_share.to_string()),
                ("per_sample_lambda", on_off(cfg.mix.per_sample_lambda).into()),
            ],
        ));
    }

    sections.push((
        "augment",
        vec![
            ("color_jitter", on_off(a.color_jitter).into()),
            ("jitter_strength", a.jitter_strength.to_string()),
            ("noise_sigma", a.noise_sigma.to_string()),
            ("hflip", on_off(a.geometric.hflip).into()),
            ("rotate", opt_num(a.geometric.rotate)),
            ("random_crop", opt_num(a.geometric.random_crop)),
            ("perspective", opt_num(a.geometric.perspective)),
        ],
    ));

    let mut out = String::new();
    for (i, (name, keys)) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "[{name}]").unwrap();
        for (k, v) in keys {
            if v.is_empty() {
                writeln!(out, "{k} =").unwrap();
            } else {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::ScheduleKind;

    const GRADING: &str = "
# grading run
[run]
task = classification
name = grade
seed = 3

[train]
epochs = 30
schedule = cosine

[mix]
mix_prob = 0.1
";

    #[test]
    fn file_then_override() {
        let cfg = load_run_config(GRADING, "grading.cfg", Some(Task::Classification), &["mix.mix_prob=0.5".into()])
            .unwrap();
        assert_eq!(cfg.mix.mix_prob, 0.5);
        assert_eq!(cfg.schedule.total_epochs, 30);
        assert_eq!(cfg.schedule.kind, ScheduleKind::Cosine);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.name, "grade");
    }

    #[test]
    fn echo_is_idempotent() {
        let cfg = load_run_config(GRADING, "grading.cfg", None, &[]).unwrap();
        let text = to_config_string(&cfg);
        let again = load_run_config(&text, "echo", None, &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, to_config_string(&again));

        let seg = load_run_config("[run]\nlesion = NV\n[augment]\nrotate = off\n", "s", Some(Task::Segmentation), &[])
            .unwrap();
        assert_eq!(seg.augment.geometric.rotate, None);
        let again = load_run_config(&to_config_string(&seg), "echo", None, &[]).unwrap();
        assert_eq!(seg, again);
    }

    #[test]
    fn errors_name_the_line() {
        let err = ConfigDoc::parse("[run]\nseed = 1\nbogus = 2\n", "a.cfg").unwrap_err();
        assert!(err.to_string().starts_with("a.cfg:3:"), "{err}");
        assert!(ConfigDoc::parse("seed = 1\n", "a").is_err());
        assert!(ConfigDoc::parse("[run]\nseed = 1\nseed = 2\n", "a").is_err());
        assert!(ConfigDoc::parse("[run]\n[run]\n", "a").is_err());
        assert!(ConfigDoc::parse("[runs]\n", "a").is_err());
        assert!(ConfigDoc::parse("[run\n", "a").is_err());
        let err = load_run_config("[run]\nseed = x\n", "b.cfg", Some(Task::Classification), &[]).unwrap_err();
        assert!(err.to_string().starts_with("b.cfg:2:"), "{err}");
    }

    #[test]
    fn task_scoped_keys() {
        assert!(load_run_config("[mix]\nmix_prob = 0.5\n", "a", Some(Task::Segmentation), &[]).is_err());
        assert!(load_run_config("[run]\nlesion = NV\n", "a", Some(Task::Classification), &[]).is_err());
        assert!(load_run_config("[run]\ntask = seg\n", "a", Some(Task::Classification), &[]).is_err());
        assert!(load_run_config("", "a", None, &[]).is_err());
    }

    #[test]
    fn arch_change_takes_registry_size() {
        let cfg = load_run_config("[model]\narch = tiny_unet\n[run]\nlesion = IRMA\n", "a", Some(Task::Segmentation), &[])
            .unwrap();
        assert_eq!(cfg.model.arch, "tiny_unet");
        assert_eq!(cfg.model.input_size, 64);
        assert!(load_run_config("[model]\narch = unet\ninput_size = 100\n[run]\nlesion = NV\n", "a", None, &[]).is_err());
    }

    #[test]
    fn bad_overrides() {
        let mut doc = ConfigDoc::default();
        assert!(doc.apply_override("mix_prob=0.5").is_err());
        assert!(doc.apply_override("mix.mix_prob").is_err());
        assert!(doc.apply_override("mix.nope=1").is_err());
        doc.apply_override("mix.mix_prob=0.5").unwrap();
        doc.apply_override("mix.mix_prob = 1").unwrap();
        assert_eq!(doc.get("mix", "mix_prob").unwrap().value, "1");
    }
}
