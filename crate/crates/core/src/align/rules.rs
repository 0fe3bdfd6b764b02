use std::fmt;
use std::path::Path;
use std::str::FromStr;

use glob::Pattern;

use crate::structure::NodeType;

use super::{AlignError, Result};

const DEFAULT_RULES: &str = include_str!("../../rules/default.rules");

/// Head POS used when matching the root token's arc.
pub const ROOT_POS: &str = "ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    ObjAttr,
    RelObj,
    ObjObj,
    ObjRel,
    Function,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ObjAttr,
        Category::RelObj,
        Category::ObjObj,
        Category::ObjRel,
        Category::Function,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ObjAttr => "OBJ-ATTR",
            Category::RelObj => "REL-OBJ",
            Category::ObjObj => "OBJ-OBJ",
            Category::ObjRel => "OBJ-REL",
            Category::Function => "FUNCTION",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Type given to a rule's dependent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TypeAction {
    Set(NodeType),
    /// Takes the type of the head (function words).
    Inherit,
}

/// Where a rule points its dependent's parent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParentAction {
    SelfParent,
    Head,
    /// The head's first other dependent carrying this label.
    Sibling(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Action {
    pub dep_type: Option<TypeAction>,
    pub head_type: Option<NodeType>,
    pub parent: Option<ParentAction>,
    /// Redirects the head's parent to the dependent.
    pub head_parent_to_dep: bool,
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut a = Action::default();
        for part in s.split_whitespace() {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("action {part:?} is not key=value"))?;
            let node_type = |v: &str| v.parse::<NodeType>().map_err(|e| e.to_string());
            match key {
                "type" if a.dep_type.is_none() => {
                    a.dep_type = Some(match value {
                        "inherit" => TypeAction::Inherit,
                        v => TypeAction::Set(node_type(v)?),
                    })
                }
                "head-type" if a.head_type.is_none() => a.head_type = Some(node_type(value)?),
                "parent" if a.parent.is_none() => {
                    a.parent = Some(match value {
                        "self" => ParentAction::SelfParent,
                        "head" => ParentAction::Head,
                        v => match v.strip_prefix("sibling:") {
                            Some(label) if !label.is_empty() => ParentAction::Sibling(label.to_string()),
                            _ => return Err(format!("unknown parent target {v:?}")),
                        },
                    })
                }
                "head-parent" if !a.head_parent_to_dep => {
                    if value != "dep" {
                        return Err(format!("unknown head-parent target {value:?}"));
                    }
                    a.head_parent_to_dep = true;
                }
                "type" | "head-type" | "parent" | "head-parent" => return Err(format!("{key} given twice")),
                _ => return Err(format!("unknown action key {key:?}")),
            }
        }
        if a == Action::default() {
            return Err("empty action".into());
        }
        Ok(a)
    }
}

/// Comma-separated glob alternatives.
#[derive(Clone, Debug)]
pub struct GlobList(Vec<Pattern>);

impl GlobList {
    pub fn matches(&self, s: &str) -> bool {
        self.0.iter().any(|p| p.matches(s))
    }
}

impl FromStr for GlobList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let pats = s
            .split(',')
            .map(str::trim)
            .map(|p| {
                if p.is_empty() {
                    return Err(format!("empty pattern in {s:?}"));
                }
                Pattern::new(p).map_err(|e| format!("bad pattern {p:?}: {e}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(GlobList(pats))
    }
}

#[derive(Clone, Debug)]
pub struct RewriteRule {
    /// 1-based position in the rule file's rule order.
    pub id: usize,
    /// 1-based line in the source text.
    pub line: usize,
    pub category: Category,
    pub label: GlobList,
    pub head_pos: GlobList,
    pub dep_pos: GlobList,
    pub action: Action,
}

impl RewriteRule {
    pub fn matches(&self, label: &str, head_pos: &str, dep_pos: &str) -> bool {
        self.label.matches(label) && self.head_pos.matches(head_pos) && self.dep_pos.matches(dep_pos)
    }
}

/// Ordered rule list; the first matching rule wins.
#[derive(Clone, Debug)]
pub struct RuleSet {
    rules: Vec<RewriteRule>,
    /// Where the rules came from, for output metadata.
    pub source: String,
}

impl RuleSet {
    /// The bundled defaults, a reconstruction of the categories described
    /// for the original rule set.
    pub fn builtin() -> Self {
        RuleSet::parse(DEFAULT_RULES, "builtin (reconstructed)").expect("bundled rules parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AlignError::Io(format!("{}: {e}", path.display())))?;
        RuleSet::parse(&text, &path.display().to_string())
    }

    pub fn builtin_text() -> &'static str {
        DEFAULT_RULES
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| AlignError::Rules {
                origin: source.to_string(),
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(fail(format!("expected 5 fields, found {}", fields.len())));
            }
            rules.push(RewriteRule {
                id: rules.len() + 1,
                line: i + 1,
                category: fields[0].parse().map_err(fail)?,
                label: fields[1].parse().map_err(fail)?,
                head_pos: fields[2].parse().map_err(fail)?,
                dep_pos: fields[3].parse().map_err(fail)?,
                action: fields[4].parse().map_err(fail)?,
            });
        }
        Ok(RuleSet {
            rules,
            source: source.to_string(),
        })
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.rules.iter().filter(|r| r.category == category).count()
    }

    pub fn first_match(&self, label: &str, head_pos: &str, dep_pos: &str) -> Option<&RewriteRule> {
        self.rules.iter().find(|r| r.matches(label, head_pos, dep_pos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_counts_per_category() {
        let r = RuleSet::builtin();
        let counts: Vec<usize> = Category::ALL.iter().map(|&c| r.count(c)).collect();
        assert_eq!(counts, [7, 12, 1, 10, 22]);
        let ids: Vec<usize> = r.rules().iter().map(|r| r.id).collect();
        assert_eq!(ids, (1..=52).collect::<Vec<_>>());
    }

    #[test]
    fn first_match_wins() {
        let r = RuleSet::parse(
            "OBJ-ATTR | amod | NN* | JJ | type=ATTRIBUTE\nOBJ-ATTR | amod | * | * | type=OBJECT # fallback\n",
            "t",
        )
        .unwrap();
        assert_eq!(r.first_match("amod", "NNS", "JJ").unwrap().id, 1);
        assert_eq!(r.first_match("amod", "VB", "JJ").unwrap().id, 2);
        assert!(r.first_match("det", "NN", "DT").is_none());
    }

    #[test]
    fn malformed_rules_report_their_line() {
        for (text, line) in [
            ("\nBOGUS | a | b | c | type=OBJECT", 2),
            ("OBJ-ATTR | a | b | type=OBJECT", 1),
            ("# c\n\nOBJ-ATTR | a | b | c | kind=OBJECT", 3),
            ("OBJ-ATTR | a | b | c | type=THING", 1),
            ("OBJ-ATTR | a | b | c | parent=uncle", 1),
            ("OBJ-ATTR | a | b | c | type=OBJECT type=OBJECT", 1),
            ("OBJ-ATTR | a | [ | c | type=OBJECT", 1),
        ] {
            match RuleSet::parse(text, "t") {
                Err(AlignError::Rules { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn action_parsing() {
        let a: Action = "type=OBJECT head-type=RELATIONSHIP head-parent=dep parent=sibling:nsubj"
            .parse()
            .unwrap();
        assert_eq!(a.dep_type, Some(TypeAction::Set(NodeType::Object)));
        assert_eq!(a.head_type, Some(NodeType::Relationship));
        assert_eq!(a.parent, Some(ParentAction::Sibling("nsubj".into())));
        assert!(a.head_parent_to_dep);
    }
}
