//! Timeout-insertion patch planning.
//!
//! Blocking calls are fixed by a strategy ladder: replace the call with a
//! timeout-accepting overload, else bind existing `set*timeout*` setters,
//! else wrap the call in a worker with a bounded wait. Infinite loops get a
//! per-iteration elapsed-time guard. Every plan exposes a configurable
//! timeout variable read at initialization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("callsite {class}.{method} not found in the API catalog")]
    UnknownCallsite { class: String, method: String },
    #[error("pseudo-source already carries the {0} patch")]
    AlreadyPatched(String),
    #[error("malformed API catalog: {0}")]
    MalformedCatalog(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParam {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMethod {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ApiParam>,
    #[serde(default)]
    pub throws: Vec<String>,
}

impl ApiMethod {
    fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{} {}", p.type_name, p.name))
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

/// Classes and their method signatures, loaded from a JSON document
/// `{ "classes": { "<class>": [ {"name":..,"params":[..],"throws":[..]} ] } }`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCatalog {
    pub classes: BTreeMap<String, Vec<ApiMethod>>,
}

impl ApiCatalog {
    pub fn from_json(text: &str) -> Result<Self, PatchError> {
        let catalog: ApiCatalog =
            serde_json::from_str(text).map_err(|e| PatchError::MalformedCatalog(e.to_string()))?;
        for (class, methods) in &catalog.classes {
            let mut seen = std::collections::HashSet::new();
            for m in methods {
                if !seen.insert(m.signature()) {
                    return Err(PatchError::MalformedCatalog(format!(
                        "duplicate signature {} in class {class}",
                        m.signature()
                    )));
                }
            }
        }
        Ok(catalog)
    }

    fn methods(&self, class: &str) -> Option<&[ApiMethod]> {
        self.classes.get(class).map(|m| m.as_slice())
    }
}

/// The blocked call being patched, as observed in the pseudo-source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Callsite {
    pub class: String,
    pub method: String,
    /// Parameter types of the call as written.
    pub param_types: Vec<String>,
    pub file: String,
    pub line: u32,
    pub enclosing_function: String,
    /// Exceptions already declared by the enclosing function.
    pub enclosing_throws: Vec<String>,
}

/// An infinite-loop site in the pseudo-source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSite {
    pub function: String,
    pub file: String,
    pub line: u32,
    /// Existing loop-body statements, preserved verbatim in the diff.
    pub body: Vec<String>,
    /// Explicit config key; derived from the function name when absent.
    pub config_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixStrategy {
    ReplaceWithOverload,
    InsertSetters,
    AsyncWrapper,
    LoopGuard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub strategy: FixStrategy,
    pub target_function: String,
    pub target_file: String,
    pub target_line: u32,
    /// Configurable variable every plan exposes.
    pub new_config_key: String,
    /// Where the configured value is bound in the patched code.
    pub timeout_param_binding: String,
    pub rendered_diff: String,
    pub notes: Vec<String>,
}

/// Literal guard condition inserted by loop-guard plans.
pub const LOOP_GUARD_CONDITION: &str = "timeout > 0 && elapsed >= timeout";

fn is_duration_type(type_name: &str) -> bool {
    matches!(type_name, "int" | "long" | "Integer" | "Long")
}

fn is_timeout_param(param: &ApiParam) -> bool {
    is_duration_type(&param.type_name) && param.name.to_lowercase().contains("timeout")
}

fn contains_fold(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

fn class_methods<'a>(
    catalog: &'a ApiCatalog,
    callsite: &Callsite,
) -> Result<&'a [ApiMethod], PatchError> {
    catalog
        .methods(&callsite.class)
        .ok_or_else(|| PatchError::UnknownCallsite {
            class: callsite.class.clone(),
            method: callsite.method.clone(),
        })
}

/// Finds an overload of the called method with exactly one extra trailing
/// integer-duration timeout parameter. Several qualifiers resolve to the
/// one with the fewest parameters; a residual tie is reported via the
/// second tuple field.
pub fn find_overload_with_timeout(
    catalog: &ApiCatalog,
    callsite: &Callsite,
) -> Result<Option<(ApiMethod, bool)>, PatchError> {
    let methods = class_methods(catalog, callsite)?;
    if !methods.iter().any(|m| m.name == callsite.method) {
        return Err(PatchError::UnknownCallsite {
            class: callsite.class.clone(),
            method: callsite.method.clone(),
        });
    }
    let mut qualifying: Vec<&ApiMethod> = methods
        .iter()
        .filter(|m| {
            m.name == callsite.method
                && m.params.len() == callsite.param_types.len() + 1
                && m.params[..callsite.param_types.len()]
                    .iter()
                    .zip(&callsite.param_types)
                    .all(|(p, t)| &p.type_name == t)
                && is_timeout_param(m.params.last().expect("len checked"))
        })
        .collect();
    qualifying.sort_by(|a, b| {
        a.params
            .len()
            .cmp(&b.params.len())
            .then_with(|| a.signature().cmp(&b.signature()))
    });
    match qualifying.as_slice() {
        [] => Ok(None),
        [only] => Ok(Some(((*only).clone(), false))),
        [first, rest @ ..] => {
            let tied = rest.iter().any(|m| m.params.len() == first.params.len());
            Ok(Some(((*first).clone(), tied)))
        }
    }
}

/// All methods of the class whose name contains both "set" and "timeout",
/// case-insensitive.
pub fn find_timeout_setters(
    catalog: &ApiCatalog,
    callsite: &Callsite,
) -> Result<Vec<ApiMethod>, PatchError> {
    let methods = class_methods(catalog, callsite)?;
    let mut setters: Vec<ApiMethod> = methods
        .iter()
        .filter(|m| contains_fold(&m.name, "set") && contains_fold(&m.name, "timeout"))
        .cloned()
        .collect();
    setters.sort_by(|a, b| a.signature().cmp(&b.signature()));
    Ok(setters)
}

fn derive_config_key(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    format!("{cleaned}.timeout")
}

fn config_block(key: &str) -> String {
    format!(
        "+ <property>\n+     <name>{key}</name>\n+     <value>0</value>\n+ </property>\n\
         + private String TIMEOUT_KEY = \"{key}\";\n+ private long timeout = conf.getInt(TIMEOUT_KEY);\n"
    )
}

fn ensure_unpatched(source: &str, key: &str) -> Result<(), PatchError> {
    if source.contains(key) {
        return Err(PatchError::AlreadyPatched(key.to_string()));
    }
    Ok(())
}

/// Plans a fix for a blocking call per the strategy ladder.
///
/// `existing_source` is the pseudo-source of the enclosing function; a plan
/// is refused when it already reads the config key we would introduce.
pub fn plan_blocking_fix(
    callsite: &Callsite,
    catalog: &ApiCatalog,
    existing_source: &str,
) -> Result<PatchPlan, PatchError> {
    let key = derive_config_key(&callsite.method);
    ensure_unpatched(existing_source, &key)?;
    let args = (0..callsite.param_types.len())
        .map(|i| format!("arg{i}"))
        .collect::<Vec<_>>()
        .join(", ");
    let call = format!("{}.{}({args})", callsite.class, callsite.method);

    if let Some((overload, tied)) = find_overload_with_timeout(catalog, callsite)? {
        let binding = format!(
            "{}.{}({}{}timeout)",
            callsite.class,
            callsite.method,
            args,
            if args.is_empty() { "" } else { ", " }
        );
        let diff = format!(
            "--- a/{file}\n+++ b/{file}\n@@ {function} @@\n{config}- {call};\n+ {binding};\n",
            file = callsite.file,
            function = callsite.enclosing_function,
            config = config_block(&key),
        );
        let mut notes = vec![format!("overload: {}", overload.signature())];
        if tied {
            notes.push("multiple qualifying overloads at equal arity; picked first by signature".into());
        }
        return Ok(PatchPlan {
            strategy: FixStrategy::ReplaceWithOverload,
            target_function: callsite.enclosing_function.clone(),
            target_file: callsite.file.clone(),
            target_line: callsite.line,
            new_config_key: key,
            timeout_param_binding: binding,
            rendered_diff: diff,
            notes,
        });
    }

    let setters = find_timeout_setters(catalog, callsite)?;
    if !setters.is_empty() {
        let calls: Vec<String> = setters
            .iter()
            .map(|s| format!("{}.{}(timeout)", lower_first(&callsite.class), s.name))
            .collect();
        let binding = calls.join("; ");
        let added: String = calls.iter().map(|c| format!("+ {c};\n")).collect();
        let diff = format!(
            "--- a/{file}\n+++ b/{file}\n@@ {function} @@\n{config}{added}  {call};\n",
            file = callsite.file,
            function = callsite.enclosing_function,
            config = config_block(&key),
        );
        return Ok(PatchPlan {
            strategy: FixStrategy::InsertSetters,
            target_function: callsite.enclosing_function.clone(),
            target_file: callsite.file.clone(),
            target_line: callsite.line,
            new_config_key: key,
            timeout_param_binding: binding,
            rendered_diff: diff,
            notes: setters.iter().map(|s| format!("setter: {}", s.signature())).collect(),
        });
    }

    // No existing timeout machinery: run the call on a worker and bound the
    // wait. Cancel the worker, rethrow an already-declared exception, always
    // shut the worker down.
    let rethrown = callsite
        .enclosing_throws
        .first()
        .cloned()
        .unwrap_or_else(|| "RuntimeException".to_string());
    let wrapper = format!("{}WithTimeout", callsite.method);
    let binding = "future.get(timeout, TimeUnit.MILLISECONDS)".to_string();
    let diff = format!(
        "--- a/{file}\n+++ b/{file}\n@@ {function} @@\n{config}- {call};\n+ {wrapper}();\n\
         + void {wrapper}() throws {rethrown} {{\n\
         +     ExecutorService executor = Executors.newSingleThreadExecutor();\n\
         +     Future<Void> future = executor.submit(() -> {call});\n\
         +     try {{\n\
         +         {binding};\n\
         +     }} catch (Exception e) {{\n\
         +         future.cancel(true);\n\
         +         throw new {rethrown}();\n\
         +     }} finally {{ executor.shutdown(); }}\n\
         + }}\n",
        file = callsite.file,
        function = callsite.enclosing_function,
        config = config_block(&key),
    );
    Ok(PatchPlan {
        strategy: FixStrategy::AsyncWrapper,
        target_function: callsite.enclosing_function.clone(),
        target_file: callsite.file.clone(),
        target_line: callsite.line,
        new_config_key: key,
        timeout_param_binding: binding,
        rendered_diff: diff,
        notes: vec![
            format!("wrapper {wrapper} rethrows declared {rethrown}"),
            "wrapper returns the callee's result on success; the source \
             control flow after a caught timeout is the raised exception"
                .into(),
        ],
    })
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Plans a loop-guard fix: record the start before the loop and raise a
/// timeout error once the elapsed time reaches the configured bound. A
/// configured value of 0 disables the guard.
pub fn plan_loop_fix(site: &LoopSite, existing_source: &str) -> Result<PatchPlan, PatchError> {
    let key = site
        .config_key
        .clone()
        .unwrap_or_else(|| derive_config_key(&site.function));
    ensure_unpatched(existing_source, &key)?;
    let body: String = site.body.iter().map(|l| format!("  {l}\n")).collect();
    let diff = format!(
        "--- a/{file}\n+++ b/{file}\n@@ {function} @@\n{config}\
         + long st = System.currentTimeMillis();\n\
         \x20 while (...) {{\n{body}\
         +     long elapsed = System.currentTimeMillis() - st;\n\
         +     if ({cond}) {{\n\
         +         throw new TimeoutException(\"Timed out.\");\n\
         +     }}\n\
         \x20 }}\n",
        file = site.file,
        function = site.function,
        config = config_block(&key),
        cond = LOOP_GUARD_CONDITION,
    );
    Ok(PatchPlan {
        strategy: FixStrategy::LoopGuard,
        target_function: site.function.clone(),
        target_file: site.file.clone(),
        target_line: site.line,
        new_config_key: key,
        timeout_param_binding: format!("guard: if ({LOOP_GUARD_CONDITION}) throw"),
        rendered_diff: diff,
        notes: Vec::new(),
    })
}
