//! Debates, task instances and their file formats.
//!
//! The canonical instance file is a UTF-8 TSV with the header
//!
//! ```text
//! id  warrant0  warrant1  label  reason  claim  debateTitle  debateInfo
//! ```
//!
//! optionally followed by a `debateId` column. Without that column an
//! instance refers to its debate by title. The JSONL alternative carries the
//! same field names, one object per line. Debates live in a separate TSV with
//! the header `debateId  year  title  description`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTANCE_COLUMNS: [&str; 8] = [
    "id",
    "warrant0",
    "warrant1",
    "label",
    "reason",
    "claim",
    "debateTitle",
    "debateInfo",
];
pub const DEBATE_ID_COLUMN: &str = "debateId";
pub const DEBATE_COLUMNS: [&str; 4] = ["debateId", "year", "title", "description"];

/// Last year routed to the training split.
pub const LAST_TRAIN_YEAR: i32 = 2015;
pub const DEV_YEAR: i32 = 2016;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: String,
        message: String,
    },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("instance {instance:?} refers to unknown debate {debate:?}")]
    UnresolvedDebate { instance: String, debate: String },
    #[error("instance {id:?}: field {column} contains a tab or newline and cannot be written as TSV")]
    Unwritable { id: String, column: &'static str },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceFormat {
    Tsv,
    Jsonl,
}

impl InstanceFormat {
    /// Picks the format from the file extension; anything but `.jsonl` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => InstanceFormat::Jsonl,
            _ => InstanceFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Debate {
    pub debate_id: String,
    pub title: String,
    pub description: String,
    pub year: i32,
}

/// One (R, C, W0, W1) tuple with the index of the correct warrant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub warrant0: String,
    pub warrant1: String,
    pub label: u8,
    pub reason: String,
    pub claim: String,
    #[serde(rename = "debateTitle")]
    pub debate_title: String,
    #[serde(rename = "debateInfo")]
    pub debate_info: String,
    #[serde(rename = "debateId", default)]
    pub debate_id: String,
}

impl TaskInstance {
    /// The warrant in slot `slot` (0 or 1).
    pub fn warrant(&self, slot: usize) -> &str {
        if slot == 0 {
            &self.warrant0
        } else {
            &self.warrant1
        }
    }

    /// The same instance with the two warrants swapped and the label flipped.
    pub fn permuted(&self) -> TaskInstance {
        TaskInstance {
            warrant0: self.warrant1.clone(),
            warrant1: self.warrant0.clone(),
            label: 1 - self.label.min(1),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<TaskInstance>,
    pub dev: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

impl DataSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyField(&'static str),
    DuplicateWarrants,
    LabelOutOfRange(u8),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyField(field) => write!(f, "empty field: {field}"),
            Violation::DuplicateWarrants => f.write_str("duplicate warrants"),
            Violation::LabelOutOfRange(label) => write!(f, "label out of range: {label}"),
        }
    }
}

/// Lists every broken invariant of `inst`; empty means the instance is valid.
pub fn validate_instance(inst: &TaskInstance) -> Vec<Violation> {
    let mut violations = Vec::new();
    let fields: [(&'static str, &str); 5] = [
        ("id", &inst.instance_id),
        ("reason", &inst.reason),
        ("claim", &inst.claim),
        ("warrant0", &inst.warrant0),
        ("warrant1", &inst.warrant1),
    ];
    for (name, value) in fields {
        if value.trim().is_empty() {
            violations.push(Violation::EmptyField(name));
        }
    }
    if inst.warrant0 == inst.warrant1 && !inst.warrant0.trim().is_empty() {
        violations.push(Violation::DuplicateWarrants);
    }
    if inst.label > 1 {
        violations.push(Violation::LabelOutOfRange(inst.label));
    }
    violations
}

pub fn load_instances(path: &Path, format: InstanceFormat) -> Result<Vec<TaskInstance>, CorpusError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    match format {
        InstanceFormat::Tsv => parse_instances_tsv(&content),
        InstanceFormat::Jsonl => parse_instances_jsonl(&content),
    }
}

pub fn parse_instances_tsv(content: &str) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut lines = content.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let header: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let with_debate_id = match header.as_slice() {
        h if h == INSTANCE_COLUMNS => false,
        h if h.len() == 9 && h[..8] == INSTANCE_COLUMNS && h[8] == DEBATE_ID_COLUMN => true,
        _ => {
            return Err(CorpusError::Malformed {
                line: 1,
                column: "header".into(),
                message: format!("expected columns {:?}", INSTANCE_COLUMNS),
            })
        }
    };
    let width = header.len();

    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != width {
            return Err(CorpusError::Malformed {
                line,
                column: "*".into(),
                message: format!("expected {width} columns, found {}", cols.len()),
            });
        }
        let label = parse_label(cols[3]).ok_or_else(|| CorpusError::Malformed {
            line,
            column: "label".into(),
            message: format!("label must be 0 or 1, found {:?}", cols[3]),
        })?;
        let debate_title = cols[6].to_string();
        let inst = TaskInstance {
            instance_id: cols[0].to_string(),
            warrant0: cols[1].to_string(),
            warrant1: cols[2].to_string(),
            label,
            reason: cols[4].to_string(),
            claim: cols[5].to_string(),
            debate_id: if with_debate_id {
                cols[8].to_string()
            } else {
                debate_title.clone()
            },
            debate_title,
            debate_info: cols[7].to_string(),
        };
        admit(inst, line, &mut seen, &mut instances)?;
    }
    Ok(instances)
}

pub fn parse_instances_jsonl(content: &str) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut inst: TaskInstance = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            column: "json".into(),
            message: e.to_string(),
        })?;
        if inst.debate_id.is_empty() {
            inst.debate_id = inst.debate_title.clone();
        }
        admit(inst, line, &mut seen, &mut instances)?;
    }
    Ok(instances)
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

fn admit(
    inst: TaskInstance,
    line: usize,
    seen: &mut HashSet<String>,
    out: &mut Vec<TaskInstance>,
) -> Result<(), CorpusError> {
    if let Some(v) = validate_instance(&inst).into_iter().next() {
        let column = match &v {
            Violation::EmptyField(field) => field.to_string(),
            Violation::DuplicateWarrants => "warrant1".to_string(),
            Violation::LabelOutOfRange(_) => "label".to_string(),
        };
        return Err(CorpusError::Malformed {
            line,
            column,
            message: v.to_string(),
        });
    }
    if !seen.insert(inst.instance_id.clone()) {
        return Err(CorpusError::DuplicateId {
            line,
            id: inst.instance_id,
        });
    }
    out.push(inst);
    Ok(())
}

/// Writes instances in the requested format. The TSV carries a `debateId`
/// column only when some instance's debate id differs from its title.
pub fn write_instances<W: Write>(
    out: &mut W,
    instances: &[TaskInstance],
    format: InstanceFormat,
) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: "<output>".into(),
        source,
    };
    match format {
        InstanceFormat::Jsonl => {
            for inst in instances {
                let line = serde_json::to_string(inst).expect("instance serializes");
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        InstanceFormat::Tsv => {
            let with_debate_id = instances.iter().any(|i| i.debate_id != i.debate_title);
            let mut header = INSTANCE_COLUMNS.join("\t");
            if with_debate_id {
                header.push('\t');
                header.push_str(DEBATE_ID_COLUMN);
            }
            writeln!(out, "{header}").map_err(io)?;
            for inst in instances {
                let label = inst.label.to_string();
                let mut cols: Vec<(&'static str, &str)> = vec![
                    ("id", &inst.instance_id),
                    ("warrant0", &inst.warrant0),
                    ("warrant1", &inst.warrant1),
                    ("label", &label),
                    ("reason", &inst.reason),
                    ("claim", &inst.claim),
                    ("debateTitle", &inst.debate_title),
                    ("debateInfo", &inst.debate_info),
                ];
                if with_debate_id {
                    cols.push(("debateId", &inst.debate_id));
                }
                let mut fields = Vec::with_capacity(cols.len());
                for (column, value) in cols {
                    if value.contains(['\t', '\n', '\r']) {
                        return Err(CorpusError::Unwritable {
                            id: inst.instance_id.clone(),
                            column,
                        });
                    }
                    fields.push(value);
                }
                writeln!(out, "{}", fields.join("\t")).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn save_instances(path: &Path, instances: &[TaskInstance], format: InstanceFormat) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_instances(&mut buf, instances, format)?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn load_debates(path: &Path) -> Result<BTreeMap<String, Debate>, CorpusError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_debates_tsv(&content)
}

pub fn parse_debates_tsv(content: &str) -> Result<BTreeMap<String, Debate>, CorpusError> {
    let mut lines = content.lines().enumerate();
    let mut debates = BTreeMap::new();
    let Some((_, header)) = lines.next() else {
        return Ok(debates);
    };
    if header.trim_end_matches('\r').split('\t').collect::<Vec<_>>() != DEBATE_COLUMNS {
        return Err(CorpusError::Malformed {
            line: 1,
            column: "header".into(),
            message: format!("expected columns {:?}", DEBATE_COLUMNS),
        });
    }
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 {
            return Err(CorpusError::Malformed {
                line,
                column: "*".into(),
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let year: i32 = cols[1].trim().parse().map_err(|_| CorpusError::Malformed {
            line,
            column: "year".into(),
            message: format!("not an integer: {:?}", cols[1]),
        })?;
        if !(1990..=2100).contains(&year) {
            return Err(CorpusError::Malformed {
                line,
                column: "year".into(),
                message: format!("year {year} outside [1990, 2100]"),
            });
        }
        if cols[2].trim().is_empty() {
            return Err(CorpusError::Malformed {
                line,
                column: "title".into(),
                message: "empty field: title".into(),
            });
        }
        let debate = Debate {
            debate_id: cols[0].to_string(),
            year,
            title: cols[2].to_string(),
            description: cols[3].to_string(),
        };
        if debates.insert(debate.debate_id.clone(), debate).is_some() {
            return Err(CorpusError::Malformed {
                line,
                column: "debateId".into(),
                message: format!("duplicate debate id {:?}", cols[0]),
            });
        }
    }
    Ok(debates)
}

/// Routes instances by debate year: up to 2015 train, 2016 dev, 2017 and
/// later test. Debates are looked up by id first, then by title.
pub fn split_by_year(
    instances: &[TaskInstance],
    debates: &BTreeMap<String, Debate>,
) -> Result<DataSplit, CorpusError> {
    let by_title: HashMap<&str, &Debate> = debates.values().map(|d| (d.title.as_str(), d)).collect();
    let mut split = DataSplit::default();
    for inst in instances {
        let debate = debates
            .get(&inst.debate_id)
            .or_else(|| by_title.get(inst.debate_id.as_str()).copied())
            .ok_or_else(|| CorpusError::UnresolvedDebate {
                instance: inst.instance_id.clone(),
                debate: inst.debate_id.clone(),
            })?;
        let bucket = match debate.year {
            y if y <= LAST_TRAIN_YEAR => &mut split.train,
            DEV_YEAR => &mut split.dev,
            _ => &mut split.test,
        };
        bucket.push(inst.clone());
    }
    Ok(split)
}
