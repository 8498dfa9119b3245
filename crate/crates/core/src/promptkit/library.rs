//! Prompt component files and the hashed manifest that lists them.
//!
//! A component file is a TOML header between `+++` lines followed by the
//! body:
//!
//! ```text
//! +++
//! id = "rag_user"
//! kind = "rag_template"
//! version = 1
//! placeholders = ["exemplars", "input_text"]
//! +++
//! Given the following retrieved examples ...
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::hashing::sha256_hex;

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Instruction,
    Exemplar,
    CotTemplate,
    AutocotTemplate,
    RagTemplate,
    RefineTemplate,
    DebateTemplate,
}

impl ComponentKind {
    /// Placeholders a body of this kind may use.
    pub fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            ComponentKind::Instruction => &["label_space"],
            ComponentKind::Exemplar | ComponentKind::CotTemplate => &[],
            ComponentKind::AutocotTemplate => &["input_text", "label_space"],
            ComponentKind::RagTemplate => &["exemplars", "input_text"],
            ComponentKind::RefineTemplate => &["prompt_variants", "error_cases"],
            ComponentKind::DebateTemplate => &["prompt_variants", "agent_outputs", "input_text"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    id: String,
    kind: ComponentKind,
    #[serde(default)]
    version: u32,
    #[serde(default)]
    placeholders: Vec<String>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptComponent {
    pub id: String,
    pub kind: ComponentKind,
    pub version: u32,
    pub body: String,
    pub placeholders: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl PromptComponent {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let bad = |m: &str| PromptError::Library(m.to_string());
        let rest = text
            .strip_prefix("+++\n")
            .ok_or_else(|| bad("component must start with a `+++` header"))?;
        let end = rest.find("\n+++\n").ok_or_else(|| bad("unterminated component header"))?;
        let header: Header = toml::from_str(&rest[..end]).map_err(|e| PromptError::Library(e.to_string()))?;
        let body = rest[end + 5..].trim_end().to_string();

        let used: Vec<String> = PLACEHOLDER
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        let allowed = header.kind.allowed_placeholders();
        for name in used.iter().chain(&header.placeholders) {
            if !allowed.contains(&name.as_str()) {
                return Err(PromptError::Library(format!(
                    "component `{}` uses placeholder `{name}` not allowed for {:?}",
                    header.id, header.kind
                )));
            }
        }
        if let Some(u) = used.iter().find(|u| !header.placeholders.contains(u)) {
            return Err(PromptError::Library(format!(
                "component `{}` uses undeclared placeholder `{u}`",
                header.id
            )));
        }
        Ok(PromptComponent {
            id: header.id,
            kind: header.kind,
            version: header.version,
            body,
            placeholders: header.placeholders,
            metadata: header.tags,
        })
    }

    /// Substitutes every placeholder; each must be supplied.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        render_template(&self.id, &self.body, values)
    }
}

pub(crate) fn render_template(component: &str, body: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut missing = None;
    let out = PLACEHOLDER.replace_all(body, |c: &regex::Captures<'_>| {
        match values.iter().find(|(k, _)| *k == &c[1]) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| c[1].to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(placeholder) => Err(PromptError::Template {
            component: component.to_string(),
            placeholder,
        }),
        None => Ok(out.into_owned()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub components: Vec<ManifestEntry>,
}

/// Immutable set of components keyed by id.
#[derive(Debug, Clone)]
pub struct ComponentLibrary {
    components: BTreeMap<String, PromptComponent>,
    hashes: BTreeMap<String, String>,
}

impl ComponentLibrary {
    /// Path of the library shipped with this crate.
    pub fn bundled_manifest() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/library.json")
    }

    pub fn bundled() -> Result<Self, PromptError> {
        Self::load(Self::bundled_manifest())
    }

    /// Loads every component in the manifest, verifying content hashes.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let manifest_path = manifest_path.as_ref();
        let read = |p: &Path| {
            std::fs::read(p).map_err(|source| PromptError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let manifest: Manifest = serde_json::from_slice(&read(manifest_path)?)
            .map_err(|e| PromptError::Library(format!("manifest: {e}")))?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut components = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        for entry in &manifest.components {
            let bytes = read(&root.join(&entry.file))?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(PromptError::HashMismatch {
                    file: entry.file.clone(),
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            let text = String::from_utf8(bytes).map_err(|e| PromptError::Library(format!("{}: {e}", entry.file)))?;
            let component = PromptComponent::parse(&text)?;
            if components.contains_key(&component.id) {
                return Err(PromptError::Library(format!("duplicate component id `{}`", component.id)));
            }
            hashes.insert(component.id.clone(), actual);
            components.insert(component.id.clone(), component);
        }
        Ok(ComponentLibrary { components, hashes })
    }

    pub fn from_components(components: impl IntoIterator<Item = PromptComponent>) -> Self {
        let mut lib = ComponentLibrary {
            components: BTreeMap::new(),
            hashes: BTreeMap::new(),
        };
        for c in components {
            lib.hashes.insert(c.id.clone(), sha256_hex(c.body.as_bytes()));
            lib.components.insert(c.id.clone(), c);
        }
        lib
    }

    pub fn get(&self, id: &str) -> Result<&PromptComponent, PromptError> {
        self.components
            .get(id)
            .ok_or_else(|| PromptError::Library(format!("missing component `{id}`")))
    }

    /// Component id → content hash.
    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}
