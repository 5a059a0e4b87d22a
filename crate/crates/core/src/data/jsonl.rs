use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde_json::{json, Map, Value};

use super::{
    tokenize, Categorical, DataError, IssueEvent, IssueType, Priority, ProjectHistory, ReleaseEvent,
    ResolutionKind,
};

/// Result of ingesting a JSONL file.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub projects: Vec<ProjectHistory>,
    /// Human-readable warnings (unknown fields, re-sorted sequences).
    pub warnings: Vec<String>,
    /// Number of issue or release sequences that arrived out of time order.
    pub resorted: usize,
}

pub fn load_projects(path: impl AsRef<Path>) -> Result<LoadReport, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_projects(&text)
}

/// Parse JSONL text, one project per non-blank line.
pub fn parse_projects(text: &str) -> Result<LoadReport, DataError> {
    let mut report = LoadReport::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DataError::Json {
            line,
            message: e.to_string(),
        })?;
        let mut ctx = LineCtx { line, warnings: &mut report.warnings };
        let mut project = ctx.project(&value)?;

        if !is_sorted_by_key(&project.issues, |i| i.resolved_at) {
            project.issues.sort_by_key(|i| i.resolved_at);
            report.resorted += 1;
            report
                .warnings
                .push(format!("line {line}: issues re-sorted by resolved_at"));
        }
        if !is_sorted_by_key(&project.releases, |r| r.released_at) {
            project.releases.sort_by_key(|r| r.released_at);
            report.resorted += 1;
            report
                .warnings
                .push(format!("line {line}: releases re-sorted by released_at"));
        }
        project
            .validate()
            .map_err(|message| DataError::Schema { line, message })?;
        report.projects.push(project);
    }
    if report.projects.is_empty() {
        return Err(DataError::Empty);
    }
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}

fn is_sorted_by_key<T>(items: &[T], key: impl Fn(&T) -> i64) -> bool {
    items.windows(2).all(|w| key(&w[0]) <= key(&w[1]))
}

struct LineCtx<'a> {
    line: usize,
    warnings: &'a mut Vec<String>,
}

impl LineCtx<'_> {
    fn err(&self, message: impl Into<String>) -> DataError {
        DataError::Schema { line: self.line, message: message.into() }
    }

    fn object<'v>(&self, v: &'v Value, what: &str) -> Result<&'v Map<String, Value>, DataError> {
        v.as_object().ok_or_else(|| self.err(format!("{what} must be a JSON object")))
    }

    fn warn_unknown(&mut self, obj: &Map<String, Value>, known: &[&str], what: &str) {
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                self.warnings
                    .push(format!("line {}: ignoring unknown field {key} in {what}", self.line));
            }
        }
    }

    fn required<'v>(&self, obj: &'v Map<String, Value>, field: &str) -> Result<&'v Value, DataError> {
        match obj.get(field) {
            Some(Value::Null) | None => Err(self.err(format!("missing field {field}"))),
            Some(v) => Ok(v),
        }
    }

    fn string(&self, obj: &Map<String, Value>, field: &str) -> Result<String, DataError> {
        self.required(obj, field)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| self.err(format!("field {field} must be a string")))
    }

    fn day(&self, obj: &Map<String, Value>, field: &str) -> Result<i64, DataError> {
        let v = self
            .required(obj, field)?
            .as_i64()
            .ok_or_else(|| self.err(format!("field {field} must be an integer")))?;
        if v < 0 {
            return Err(self.err(format!("field {field} must be >= 0, got {v}")));
        }
        Ok(v)
    }

    fn opt_bool(&self, obj: &Map<String, Value>, field: &str) -> Result<Option<bool>, DataError> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| self.err(format!("field {field} must be a boolean"))),
        }
    }

    fn category<C: Categorical>(&self, obj: &Map<String, Value>, field: &str) -> Result<C, DataError> {
        let s = self.string(obj, field)?;
        C::parse(&s).ok_or_else(|| {
            self.err(format!(
                "field {field} has unknown value {s:?} (expected one of {})",
                C::NAMES.join(", ")
            ))
        })
    }

    fn array<'v>(&self, obj: &'v Map<String, Value>, field: &str) -> Result<&'v Vec<Value>, DataError> {
        self.required(obj, field)?
            .as_array()
            .ok_or_else(|| self.err(format!("field {field} must be an array")))
    }

    fn project(&mut self, v: &Value) -> Result<ProjectHistory, DataError> {
        let obj = self.object(v, "project")?;
        self.warn_unknown(
            obj,
            &["project_id", "start_at", "issues", "releases", "label_project"],
            "project",
        );
        let project_id = self.string(obj, "project_id")?;
        let start_at = self.day(obj, "start_at")?;
        let issues = self
            .array(obj, "issues")?
            .iter()
            .map(|i| self.issue(i))
            .collect::<Result<Vec<_>, _>>()?;
        let releases = self
            .array(obj, "releases")?
            .iter()
            .map(|r| self.release(r))
            .collect::<Result<Vec<_>, _>>()?;
        let label_project = self.opt_bool(obj, "label_project")?;

        if issues.is_empty() {
            return Err(self.err("field issues must contain at least one issue"));
        }
        check_unique(issues.iter().map(|i| i.issue_id.as_str()))
            .map_err(|id| self.err(format!("duplicate issue_id {id}")))?;
        check_unique(releases.iter().map(|r| r.release_id.as_str()))
            .map_err(|id| self.err(format!("duplicate release_id {id}")))?;

        Ok(ProjectHistory { project_id, start_at, issues, releases, label_project })
    }

    fn issue(&mut self, v: &Value) -> Result<IssueEvent, DataError> {
        let obj = self.object(v, "issue")?;
        self.warn_unknown(
            obj,
            &[
                "issue_id",
                "resolved_at",
                "description",
                "description_tokens",
                "resolution_kind",
                "patch",
                "issue_type",
                "priority",
                "label_delayed",
            ],
            "issue",
        );
        let issue_id = self.string(obj, "issue_id")?;
        let resolved_at = self.day(obj, "resolved_at")?;
        let description_tokens = match (obj.get("description_tokens"), obj.get("description")) {
            (Some(tokens), _) if !tokens.is_null() => tokens
                .as_array()
                .and_then(|a| a.iter().map(|t| t.as_str().map(str::to_owned)).collect::<Option<Vec<_>>>())
                .ok_or_else(|| self.err("field description_tokens must be an array of strings"))?,
            (_, Some(Value::String(raw))) => tokenize(raw),
            (_, Some(v)) if !v.is_null() => return Err(self.err("field description must be a string")),
            _ => return Err(self.err("missing field description")),
        };
        if description_tokens.is_empty() {
            return Err(self.err(format!("issue {issue_id}: description has no tokens")));
        }
        let resolution_kind: ResolutionKind = self.category(obj, "resolution_kind")?;
        let patch_tokens = match obj.get("patch") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(raw)) => tokenize(raw),
            Some(_) => return Err(self.err("field patch must be a string")),
        };
        if resolution_kind != ResolutionKind::FixedWithPatch && !patch_tokens.is_empty() {
            return Err(self.err(format!(
                "issue {issue_id}: patch given but resolution_kind is {}",
                resolution_kind.name()
            )));
        }
        Ok(IssueEvent {
            issue_id,
            resolved_at,
            description_tokens,
            resolution_kind,
            patch_tokens,
            issue_type: self.category::<IssueType>(obj, "issue_type")?,
            priority: self.category::<Priority>(obj, "priority")?,
            label_delayed: self.opt_bool(obj, "label_delayed")?,
        })
    }

    fn release(&mut self, v: &Value) -> Result<ReleaseEvent, DataError> {
        let obj = self.object(v, "release")?;
        self.warn_unknown(obj, &["release_id", "released_at", "label_delayed"], "release");
        Ok(ReleaseEvent {
            release_id: self.string(obj, "release_id")?,
            released_at: self.day(obj, "released_at")?,
            label_delayed: self.opt_bool(obj, "label_delayed")?,
        })
    }
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), &'a str> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(id);
        }
    }
    Ok(())
}

/// Serialize one project as a single JSON line (no trailing newline).
///
/// Descriptions are written as `description_tokens`; patches as a
/// space-joined `patch` string, which tokenizes back to the same tokens when
/// they came from [`tokenize`].
pub fn project_to_json_line(p: &ProjectHistory) -> String {
    let issues: Vec<Value> = p
        .issues
        .iter()
        .map(|i| {
            let mut obj = Map::new();
            obj.insert("issue_id".into(), json!(i.issue_id));
            obj.insert("resolved_at".into(), json!(i.resolved_at));
            obj.insert("description_tokens".into(), json!(i.description_tokens));
            obj.insert("resolution_kind".into(), json!(i.resolution_kind.name()));
            if !i.patch_tokens.is_empty() {
                obj.insert("patch".into(), json!(i.patch_tokens.join(" ")));
            }
            obj.insert("issue_type".into(), json!(i.issue_type.name()));
            obj.insert("priority".into(), json!(i.priority.name()));
            if let Some(l) = i.label_delayed {
                obj.insert("label_delayed".into(), json!(l));
            }
            Value::Object(obj)
        })
        .collect();
    let releases: Vec<Value> = p
        .releases
        .iter()
        .map(|r| {
            let mut obj = Map::new();
            obj.insert("release_id".into(), json!(r.release_id));
            obj.insert("released_at".into(), json!(r.released_at));
            if let Some(l) = r.label_delayed {
                obj.insert("label_delayed".into(), json!(l));
            }
            Value::Object(obj)
        })
        .collect();
    let mut obj = Map::new();
    obj.insert("project_id".into(), json!(p.project_id));
    obj.insert("start_at".into(), json!(p.start_at));
    obj.insert("issues".into(), Value::Array(issues));
    obj.insert("releases".into(), Value::Array(releases));
    if let Some(l) = p.label_project {
        obj.insert("label_project".into(), json!(l));
    }
    Value::Object(obj).to_string()
}

pub fn write_projects(path: impl AsRef<Path>, projects: &[ProjectHistory]) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io { path: path.display().to_string(), source };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for p in projects {
        writeln!(out, "{}", project_to_json_line(p)).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"project_id":"p1","start_at":0,"issues":[{"issue_id":"i1","resolved_at":5,"description":"Crash on start","resolution_kind":"fixed_with_patch","patch":"if x null return","issue_type":"bug","priority":"major","label_delayed":true}],"releases":[{"release_id":"r1","released_at":10,"label_delayed":false}]}"#;

    #[test]
    fn loads_single_valid_project() {
        let report = parse_projects(VALID).unwrap();
        assert_eq!(report.projects.len(), 1);
        assert!(report.warnings.is_empty());
        let issue = &report.projects[0].issues[0];
        assert_eq!(issue.description_tokens, vec!["crash", "on", "start"]);
        assert_eq!(issue.patch_tokens, vec!["if", "x", "null", "return"]);
        assert_eq!(issue.label_delayed, Some(true));
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let line = VALID.replace(r#""resolved_at":5,"#, "");
        let err = parse_projects(&line).unwrap_err();
        assert_eq!(err.to_string(), "line 1: missing field resolved_at");
    }

    #[test]
    fn bad_enum_is_an_error() {
        let line = VALID.replace(r#""priority":"major""#, r#""priority":"blocker""#);
        let err = parse_projects(&line).unwrap_err().to_string();
        assert!(err.starts_with("line 1: field priority has unknown value"), "{err}");
    }

    #[test]
    fn malformed_json_names_line() {
        let text = format!("{VALID}\n{{not json");
        match parse_projects(&text).unwrap_err() {
            DataError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_projects(""), Err(DataError::Empty)));
        assert!(matches!(parse_projects("\n  \n"), Err(DataError::Empty)));
    }

    #[test]
    fn out_of_order_issues_are_resorted() {
        let text = r#"{"project_id":"p","start_at":0,"issues":[
            {"issue_id":"late","resolved_at":20,"description":"b","resolution_kind":"invalid","issue_type":"bug","priority":"minor"},
            {"issue_id":"early","resolved_at":4,"description":"a","resolution_kind":"invalid","issue_type":"bug","priority":"minor"}],"releases":[]}"#
            .replace('\n', "");
        let report = parse_projects(&text).unwrap();
        assert_eq!(report.resorted, 1);
        let order: Vec<&str> = report.projects[0].issues.iter().map(|i| i.issue_id.as_str()).collect();
        assert_eq!(order, vec!["early", "late"]);
        assert_eq!(report.projects[0].issues[0].resolved_at, 4);
    }

    #[test]
    fn description_tokens_win_over_description() {
        let line = VALID.replace(
            r#""description":"Crash on start""#,
            r#""description":"ignored text","description_tokens":["npe"]"#,
        );
        let report = parse_projects(&line).unwrap();
        assert_eq!(report.projects[0].issues[0].description_tokens, vec!["npe"]);
    }

    #[test]
    fn unknown_fields_warn() {
        let line = VALID.replace(r#""start_at":0"#, r#""start_at":0,"stars":12"#);
        let report = parse_projects(&line).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("stars"));
    }

    #[test]
    fn patch_on_non_patch_resolution_rejected() {
        let line = VALID.replace("fixed_with_patch", "invalid");
        assert!(parse_projects(&line).is_err());
    }

    #[test]
    fn events_before_start_rejected() {
        let line = VALID.replace(r#""start_at":0"#, r#""start_at":7"#);
        assert!(parse_projects(&line).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let original = parse_projects(VALID).unwrap().projects;
        let line = project_to_json_line(&original[0]);
        let again = parse_projects(&line).unwrap();
        assert!(again.warnings.is_empty());
        assert_eq!(again.projects, original);
    }
}
