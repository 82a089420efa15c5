//! Timeout-variable localization by taint propagation over dataflow facts.
//!
//! Every configuration key or constant whose name contains "timeout"
//! (case-insensitive) is seeded, taint is propagated forward over the
//! dataflow edges to a least fixpoint, and functions that read tainted
//! values are reported.
//!
//! The fact base is loaded from real configuration files (XML property
//! blocks or flat `key=value` properties) plus a line-oriented facts file:
//!
//! ```text
//! facts v1
//! CONST <name> <value>
//! VAR <id>
//! EDGE <assign|read-config|pass-arg> <src> <dst>
//! USE <function> <var>
//! ```
//!
//! Lines starting with `#` are comments. Values without a unit suffix are
//! milliseconds; `ms`, `s`, `min`, and `h` suffixes are normalized.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaintError {
    #[error("duplicate config key {0}")]
    DuplicateKey(String),
    #[error("cannot parse duration value {0:?}")]
    UnitError(String),
    #[error("edge endpoint {0} does not resolve to a declared id")]
    UnresolvedId(String),
    #[error("malformed facts record at line {0}: {1}")]
    MalformedFact(usize, String),
    #[error("facts file missing `facts v1` header")]
    MissingHeader,
    #[error("malformed config file {0}: {1}")]
    MalformedConfig(String, String),
}

/// One configuration entry with its value normalized to milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub key: String,
    pub value_ms: i64,
    pub raw_value: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Assign,
    ReadConfig,
    PassArg,
}

impl EdgeKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "assign" => Some(EdgeKind::Assign),
            "read-config" => Some(EdgeKind::ReadConfig),
            "pass-arg" => Some(EdgeKind::PassArg),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Assign => "assign",
            EdgeKind::ReadConfig => "read-config",
            EdgeKind::PassArg => "pass-arg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub src: String,
    pub dst: String,
}

/// Config entries, constants, dataflow edges, and function-use facts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaintFactBase {
    pub config: BTreeMap<String, ConfigEntry>,
    pub constants: BTreeMap<String, i64>,
    pub variables: BTreeSet<String>,
    pub edges: Vec<Edge>,
    /// function name -> variable ids it reads
    pub uses: BTreeMap<String, BTreeSet<String>>,
}

impl TaintFactBase {
    fn declares(&self, id: &str) -> bool {
        self.config.contains_key(id)
            || self.constants.contains_key(id)
            || self.variables.contains(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableOrigin {
    ConfigKey,
    Constant,
}

/// A timeout variable reaching a use site, with its taint witness path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutVariable {
    pub id: String,
    pub origin: VariableOrigin,
    /// Configured value when the key is set, else the constant default.
    pub effective_value_ms: i64,
    pub taint_path: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaintedUse {
    pub function: String,
    pub variable: TimeoutVariable,
}

/// Parses a duration literal to milliseconds. No suffix means milliseconds.
pub fn parse_duration_ms(raw: &str) -> Result<i64, TaintError> {
    let raw = raw.trim();
    let err = || TaintError::UnitError(raw.to_string());
    let (digits, scale) = if let Some(v) = raw.strip_suffix("ms") {
        (v, 1)
    } else if let Some(v) = raw.strip_suffix("min") {
        (v, 60_000)
    } else if let Some(v) = raw.strip_suffix('s') {
        (v, 1_000)
    } else if let Some(v) = raw.strip_suffix('h') {
        (v, 3_600_000)
    } else {
        (raw, 1)
    };
    let value: i64 = digits.trim().parse().map_err(|_| err())?;
    Ok(value * scale)
}

/// Parses `<property><name>..</name><value>..</value></property>` blocks.
pub fn parse_xml_config(text: &str, source: &str) -> Result<Vec<ConfigEntry>, TaintError> {
    let mut entries = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("<property>") {
        let after = &rest[start + "<property>".len()..];
        let end = after.find("</property>").ok_or_else(|| {
            TaintError::MalformedConfig(source.to_string(), "unterminated <property>".into())
        })?;
        let block = &after[..end];
        let name = xml_field(block, "name").ok_or_else(|| {
            TaintError::MalformedConfig(source.to_string(), "property without <name>".into())
        })?;
        let value = xml_field(block, "value").ok_or_else(|| {
            TaintError::MalformedConfig(source.to_string(), "property without <value>".into())
        })?;
        entries.push(ConfigEntry {
            key: name.trim().to_string(),
            value_ms: parse_duration_ms(&value)?,
            raw_value: value.trim().to_string(),
            source: source.to_string(),
        });
        rest = &after[end + "</property>".len()..];
    }
    Ok(entries)
}

fn xml_field(block: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = block.find(&open)? + open.len();
    let end = block[start..].find(&close)? + start;
    Some(block[start..end].to_string())
}

/// Parses flat `key=value` properties. `#` starts a comment.
pub fn parse_properties_config(text: &str, source: &str) -> Result<Vec<ConfigEntry>, TaintError> {
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            TaintError::MalformedConfig(source.to_string(), format!("not key=value: {line:?}"))
        })?;
        entries.push(ConfigEntry {
            key: key.trim().to_string(),
            value_ms: parse_duration_ms(value)?,
            raw_value: value.trim().to_string(),
            source: source.to_string(),
        });
    }
    Ok(entries)
}

/// Builds the fact base from parsed config entries and the facts file text.
pub fn load_facts(
    config_entries: Vec<ConfigEntry>,
    facts_text: &str,
) -> Result<TaintFactBase, TaintError> {
    let mut base = TaintFactBase::default();
    for entry in config_entries {
        if base.config.contains_key(&entry.key) {
            return Err(TaintError::DuplicateKey(entry.key));
        }
        base.config.insert(entry.key.clone(), entry);
    }

    let mut lines = facts_text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
            Some((_, l)) => break l.trim().to_string(),
            None => return Err(TaintError::MissingHeader),
        }
    };
    if header != "facts v1" {
        return Err(TaintError::MissingHeader);
    }

    let mut pending_edges = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let malformed = |msg: &str| TaintError::MalformedFact(line_no, msg.to_string());
        match fields.as_slice() {
            ["CONST", name, value] => {
                base.constants
                    .insert(name.to_string(), parse_duration_ms(value)?);
            }
            ["VAR", id] => {
                base.variables.insert(id.to_string());
            }
            ["EDGE", kind, src, dst] => {
                let kind = EdgeKind::parse(kind)
                    .ok_or_else(|| malformed(&format!("unknown edge kind {kind:?}")))?;
                pending_edges.push(Edge {
                    kind,
                    src: src.to_string(),
                    dst: dst.to_string(),
                });
            }
            ["USE", function, var] => {
                base.uses
                    .entry(function.to_string())
                    .or_default()
                    .insert(var.to_string());
            }
            _ => return Err(malformed("unrecognized record")),
        }
    }

    for edge in &pending_edges {
        for endpoint in [&edge.src, &edge.dst] {
            if !base.declares(endpoint) {
                return Err(TaintError::UnresolvedId(endpoint.clone()));
            }
        }
    }
    base.edges = pending_edges;
    for vars in base.uses.values() {
        for var in vars {
            if !base.declares(var) {
                return Err(TaintError::UnresolvedId(var.clone()));
            }
        }
    }
    Ok(base)
}

/// Seeds: config keys and constants whose name contains "timeout",
/// case-insensitive.
pub fn seed_timeout_variables(facts: &TaintFactBase) -> BTreeSet<String> {
    facts
        .config
        .keys()
        .chain(facts.constants.keys())
        .filter(|name| name.to_lowercase().contains("timeout"))
        .cloned()
        .collect()
}

/// Least fixpoint of forward reachability from the seeds.
///
/// Each tainted id maps to one shortest witness path (edge walk from a
/// seed); seeds map to the empty path. Breadth-first with ids visited in
/// sorted order, so the result is independent of edge declaration order.
pub fn propagate(
    facts: &TaintFactBase,
    seeds: &BTreeSet<String>,
) -> BTreeMap<String, Vec<Edge>> {
    let mut successors: HashMap<&str, Vec<&Edge>> = HashMap::new();
    for edge in &facts.edges {
        successors.entry(edge.src.as_str()).or_default().push(edge);
    }
    for edges in successors.values_mut() {
        edges.sort_by(|a, b| (&a.dst, a.kind.as_str()).cmp(&(&b.dst, b.kind.as_str())));
    }

    let mut tainted: BTreeMap<String, Vec<Edge>> = BTreeMap::new();
    let mut queue: VecDeque<String> = VecDeque::new();
    for seed in seeds {
        tainted.insert(seed.clone(), Vec::new());
        queue.push_back(seed.clone());
    }
    while let Some(id) = queue.pop_front() {
        let path = tainted[&id].clone();
        if let Some(edges) = successors.get(id.as_str()) {
            for edge in edges {
                if !tainted.contains_key(&edge.dst) {
                    let mut next = path.clone();
                    next.push((*edge).clone());
                    tainted.insert(edge.dst.clone(), next);
                    queue.push_back(edge.dst.clone());
                }
            }
        }
    }
    tainted
}

/// Reports which of the given functions read tainted values.
///
/// When a use is reachable from both a configured key and a constant
/// default, the configured key wins (the system uses the configured value).
pub fn tainted_uses(
    facts: &TaintFactBase,
    seeds: &BTreeSet<String>,
    functions: &[String],
) -> Vec<TaintedUse> {
    let config_seeds: BTreeSet<String> = seeds
        .iter()
        .filter(|s| facts.config.contains_key(*s))
        .cloned()
        .collect();
    let constant_seeds: BTreeSet<String> = seeds
        .iter()
        .filter(|s| facts.constants.contains_key(*s))
        .cloned()
        .collect();
    let from_config = propagate(facts, &config_seeds);
    let from_constant = propagate(facts, &constant_seeds);

    let mut out = Vec::new();
    for function in functions {
        let Some(vars) = facts.uses.get(function) else {
            continue;
        };
        for var in vars {
            let (origin, path) = if let Some(path) = from_config.get(var) {
                (VariableOrigin::ConfigKey, path)
            } else if let Some(path) = from_constant.get(var) {
                (VariableOrigin::Constant, path)
            } else {
                continue;
            };
            let seed_id = path
                .first()
                .map(|e| e.src.clone())
                .unwrap_or_else(|| var.clone());
            let effective_value_ms = match origin {
                VariableOrigin::ConfigKey => facts.config[&seed_id].value_ms,
                VariableOrigin::Constant => facts.constants[&seed_id],
            };
            out.push(TaintedUse {
                function: function.clone(),
                variable: TimeoutVariable {
                    id: seed_id,
                    origin,
                    effective_value_ms,
                    taint_path: path.clone(),
                },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HDFS_XML: &str = r#"
<configuration>
  <property>
    <name>dfs.image.transfer.timeout</name>
    <value>60000</value>
  </property>
  <property>
    <name>dfs.blocksize</name>
    <value>134217728</value>
  </property>
</configuration>
"#;

    const HDFS_FACTS: &str = "\
facts v1
CONST DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT 60000
VAR doGetUrl.timeout
EDGE read-config dfs.image.transfer.timeout doGetUrl.timeout
EDGE assign DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT doGetUrl.timeout
USE doGetUrl doGetUrl.timeout
";

    fn hdfs_facts() -> TaintFactBase {
        let entries = parse_xml_config(HDFS_XML, "hdfs-site.xml").unwrap();
        load_facts(entries, HDFS_FACTS).unwrap()
    }

    #[test]
    fn loads_config_and_constant() {
        let facts = hdfs_facts();
        assert_eq!(facts.config["dfs.image.transfer.timeout"].value_ms, 60_000);
        assert_eq!(facts.constants["DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT"], 60_000);
    }

    #[test]
    fn empty_inputs_empty_base() {
        let facts = load_facts(Vec::new(), "facts v1\n").unwrap();
        assert!(facts.config.is_empty());
        assert!(facts.edges.is_empty());
    }

    #[test]
    fn config_only_variable() {
        let entries = parse_xml_config(HDFS_XML, "hdfs-site.xml").unwrap();
        let facts = load_facts(
            entries,
            "facts v1\nVAR v\nEDGE read-config dfs.image.transfer.timeout v\nUSE f v\n",
        )
        .unwrap();
        let seeds = seed_timeout_variables(&facts);
        let uses = tainted_uses(&facts, &seeds, &["f".to_string()]);
        assert_eq!(uses.len(), 1);
        assert_eq!(uses[0].variable.origin, VariableOrigin::ConfigKey);
    }

    #[test]
    fn seeds_filter_on_keyword() {
        let facts = hdfs_facts();
        let seeds = seed_timeout_variables(&facts);
        assert!(seeds.contains("dfs.image.transfer.timeout"));
        assert!(seeds.contains("DFS_IMAGE_TRANSFER_TIMEOUT_DEFAULT"));
        assert!(!seeds.contains("dfs.blocksize"));
    }

    #[test]
    fn seeds_case_insensitive() {
        let entries = parse_properties_config(
            "ipc.client.connect.timeout=20000\nsocketTimeOutMillis=500\nretries=3\n",
            "core-site.properties",
        )
        .unwrap();
        let facts = load_facts(entries, "facts v1\n").unwrap();
        let seeds = seed_timeout_variables(&facts);
        assert!(seeds.contains("ipc.client.connect.timeout"));
        assert!(seeds.contains("socketTimeOutMillis"));
        assert_eq!(seeds.len(), 2);
    }

    #[test]
    fn no_keyword_no_seeds() {
        let entries =
            parse_properties_config("dfs.blocksize=128\n", "x.properties").unwrap();
        let facts = load_facts(entries, "facts v1\n").unwrap();
        assert!(seed_timeout_variables(&facts).is_empty());
    }

    #[test]
    fn propagates_full_chain() {
        let facts = load_facts(
            parse_properties_config("a.timeout=10\n", "p").unwrap(),
            "facts v1\nCONST C_TIMEOUT 10\nVAR local\nVAR param\n\
             EDGE assign C_TIMEOUT local\nEDGE read-config a.timeout local\n\
             EDGE pass-arg local param\n",
        )
        .unwrap();
        let seeds = seed_timeout_variables(&facts);
        let tainted = propagate(&facts, &seeds);
        assert_eq!(tainted.len(), 4);
        assert!(tainted.contains_key("param"));
    }

    #[test]
    fn no_edges_taints_only_seeds() {
        let facts = hdfs_facts();
        let seeds: BTreeSet<String> = ["dfs.image.transfer.timeout".to_string()].into();
        let tainted = propagate(
            &TaintFactBase {
                edges: Vec::new(),
                ..facts
            },
            &seeds,
        );
        assert_eq!(tainted.keys().cloned().collect::<Vec<_>>(), vec![
            "dfs.image.transfer.timeout".to_string()
        ]);
    }

    #[test]
    fn cyclic_edges_terminate() {
        let facts = load_facts(
            Vec::new(),
            "facts v1\nCONST a_timeout 1\nVAR b\nEDGE assign a_timeout b\nEDGE assign b a_timeout\n",
        )
        .unwrap();
        let seeds = seed_timeout_variables(&facts);
        let tainted = propagate(&facts, &seeds);
        assert_eq!(tainted.len(), 2);
    }

    #[test]
    fn configured_key_wins_over_default() {
        let facts = hdfs_facts();
        let seeds = seed_timeout_variables(&facts);
        let uses = tainted_uses(&facts, &seeds, &["doGetUrl".to_string()]);
        assert_eq!(uses.len(), 1);
        let var = &uses[0].variable;
        assert_eq!(var.id, "dfs.image.transfer.timeout");
        assert_eq!(var.origin, VariableOrigin::ConfigKey);
        assert_eq!(var.effective_value_ms, 60_000);
        assert_eq!(var.taint_path.len(), 1);
    }

    #[test]
    fn function_without_uses_is_empty() {
        let facts = hdfs_facts();
        let seeds = seed_timeout_variables(&facts);
        assert!(tainted_uses(&facts, &seeds, &["other".to_string()]).is_empty());
    }

    #[test]
    fn shared_variable_two_functions() {
        let facts = load_facts(
            parse_properties_config("a.timeout=10\n", "p").unwrap(),
            "facts v1\nVAR v\nEDGE read-config a.timeout v\nUSE f v\nUSE g v\n",
        )
        .unwrap();
        let seeds = seed_timeout_variables(&facts);
        let uses = tainted_uses(&facts, &seeds, &["f".to_string(), "g".to_string()]);
        assert_eq!(uses.len(), 2);
    }

    #[test]
    fn unresolved_edge_rejected() {
        let err = load_facts(Vec::new(), "facts v1\nVAR v\nEDGE assign ghost v\n").unwrap_err();
        assert!(matches!(err, TaintError::UnresolvedId(_)));
    }

    #[test]
    fn duplicate_key_rejected() {
        let entries =
            parse_properties_config("k.timeout=1\nk.timeout=2\n", "p").unwrap();
        let err = load_facts(entries, "facts v1\n").unwrap_err();
        assert!(matches!(err, TaintError::DuplicateKey(_)));
    }

    #[test]
    fn unit_suffixes_normalized() {
        assert_eq!(parse_duration_ms("60000").unwrap(), 60_000);
        assert_eq!(parse_duration_ms("60s").unwrap(), 60_000);
        assert_eq!(parse_duration_ms("5min").unwrap(), 300_000);
        assert_eq!(parse_duration_ms("2h").unwrap(), 7_200_000);
        assert_eq!(parse_duration_ms("150ms").unwrap(), 150);
        assert!(parse_duration_ms("soon").is_err());
    }
}
