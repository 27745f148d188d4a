//! On-disk firmware bundle formats.
//!
//! A bundle is either a directory with a `manifest.json` plus component
//! files (and optional control-flow sidecar files), or — flag-selected — a
//! single JSON document with inline base64 content.

use std::path::{Component as PathComponent, Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inspection::cfg::ControlFlowGraph;
use crate::model::{Component, FirmwareBundle, ModelError};

#[derive(Debug, Error)]
pub enum BundleIoError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("unsafe component path {0} (must be relative, no ..)")]
    UnsafePath(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    version: String,
    device_class: String,
    components: Vec<ManifestComponent>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestComponent {
    name: String,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supplier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cfg: Option<String>,
}

/// Single-document bundle with inline base64 content. Also embedded in
/// scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineBundle {
    pub name: String,
    pub version: String,
    pub device_class: String,
    pub components: Vec<InlineComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineComponent {
    pub name: String,
    pub content_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg: Option<ControlFlowGraph>,
}

impl InlineBundle {
    pub fn from_bundle(bundle: &FirmwareBundle) -> Self {
        InlineBundle {
            name: bundle.name.clone(),
            version: bundle.version.clone(),
            device_class: bundle.device_class.clone(),
            components: bundle
                .components()
                .iter()
                .map(|c| InlineComponent {
                    name: c.name.clone(),
                    content_b64: BASE64.encode(&c.content),
                    supplier: c.supplier.clone(),
                    cfg: c.cfg_sidecar.clone(),
                })
                .collect(),
        }
    }

    pub fn into_bundle(self) -> Result<FirmwareBundle, BundleIoError> {
        let mut components = Vec::with_capacity(self.components.len());
        for inline in self.components {
            let content = BASE64.decode(&inline.content_b64).map_err(|e| {
                BundleIoError::Parse {
                    path: PathBuf::from(&inline.name),
                    detail: format!("invalid base64 content: {e}"),
                }
            })?;
            let mut component = Component::new(inline.name, content);
            component.supplier = inline.supplier;
            if let Some(cfg) = inline.cfg {
                cfg.validate().map_err(|e| BundleIoError::Parse {
                    path: PathBuf::from(&component.name),
                    detail: e.to_string(),
                })?;
                component.cfg_sidecar = Some(cfg);
            }
            components.push(component);
        }
        Ok(FirmwareBundle::new(
            self.name,
            self.version,
            self.device_class,
            components,
        )?)
    }
}

/// Load a bundle from a directory with a `manifest.json`.
pub fn load_dir(dir: &Path) -> Result<FirmwareBundle, BundleIoError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = parse_json_file(&manifest_path)?;
    let mut components = Vec::with_capacity(manifest.components.len());
    for entry in manifest.components {
        let content = std::fs::read(dir.join(checked_relative(&entry.path)?)).map_err(|e| {
            BundleIoError::Io {
                path: dir.join(&entry.path),
                source: e,
            }
        })?;
        let mut component = Component::new(entry.name, content);
        component.supplier = entry.supplier;
        if let Some(cfg_path) = entry.cfg {
            let full = dir.join(checked_relative(&cfg_path)?);
            let text = std::fs::read_to_string(&full).map_err(|e| BundleIoError::Io {
                path: full.clone(),
                source: e,
            })?;
            let cfg = ControlFlowGraph::from_json(&text).map_err(|e| BundleIoError::Parse {
                path: full,
                detail: e.to_string(),
            })?;
            component.cfg_sidecar = Some(cfg);
        }
        components.push(component);
    }
    Ok(FirmwareBundle::new(
        manifest.name,
        manifest.version,
        manifest.device_class,
        components,
    )?)
}

/// Load a single-document inline bundle.
pub fn load_inline(path: &Path) -> Result<FirmwareBundle, BundleIoError> {
    let inline: InlineBundle = parse_json_file(path)?;
    inline.into_bundle()
}

/// Load via either format, selected by flag.
pub fn load(path: &Path, inline: bool) -> Result<FirmwareBundle, BundleIoError> {
    if inline {
        load_inline(path)
    } else {
        load_dir(path)
    }
}

/// Write a bundle out as a manifest directory (component files named
/// `<name>.bin`, sidecars `<name>.cfg.json`).
pub fn write_dir(bundle: &FirmwareBundle, dir: &Path) -> Result<(), BundleIoError> {
    std::fs::create_dir_all(dir).map_err(|e| BundleIoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut entries = Vec::new();
    for component in bundle.components() {
        if component.name.contains('/') || component.name.contains('\\') {
            return Err(BundleIoError::UnsafePath(component.name.clone()));
        }
        let file_name = format!("{}.bin", component.name);
        write(&dir.join(&file_name), &component.content)?;
        let cfg = match &component.cfg_sidecar {
            Some(cfg) => {
                let cfg_name = format!("{}.cfg.json", component.name);
                let text = serde_json::to_string_pretty(cfg).expect("cfg serializes");
                write(&dir.join(&cfg_name), text.as_bytes())?;
                Some(cfg_name)
            }
            None => None,
        };
        entries.push(ManifestComponent {
            name: component.name.clone(),
            path: file_name,
            supplier: component.supplier.clone(),
            cfg,
        });
    }
    let manifest = Manifest {
        name: bundle.name.clone(),
        version: bundle.version.clone(),
        device_class: bundle.device_class.clone(),
        components: entries,
    };
    write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BundleIoError> {
    std::fs::write(path, bytes).map_err(|e| BundleIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn checked_relative(raw: &str) -> Result<&Path, BundleIoError> {
    let path = Path::new(raw);
    let safe = path.components().all(|c| matches!(c, PathComponent::Normal(_)));
    if !safe {
        return Err(BundleIoError::UnsafePath(raw.to_string()));
    }
    Ok(path)
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BundleIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| BundleIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| BundleIoError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inspection::cfg::{CfgNode, NodeLabel};

    fn sample_bundle() -> FirmwareBundle {
        let cfg = ControlFlowGraph {
            nodes: vec![CfgNode {
                id: "entry".into(),
                labels: [NodeLabel::Entry].into(),
            }],
            edges: vec![],
            static_compares: vec![],
        };
        FirmwareBundle::new(
            "cam-fw",
            "2.1",
            "ip-camera",
            vec![
                Component::new("app", b"binary bits".to_vec())
                    .with_supplier("lens-co")
                    .with_cfg(cfg),
                Component::new("boot", b"loader".to_vec()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        write_dir(&bundle, dir.path()).unwrap();
        let loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
    }

    #[test]
    fn inline_round_trip() {
        let bundle = sample_bundle();
        let inline = InlineBundle::from_bundle(&bundle);
        let text = serde_json::to_string(&inline).unwrap();
        let parsed: InlineBundle = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.into_bundle().unwrap(), bundle);
    }

    #[test]
    fn missing_component_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = sample_bundle();
        write_dir(&bundle, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("app.bin")).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(BundleIoError::Io { .. })));
    }

    #[test]
    fn escaping_manifest_paths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"name":"x","version":"1","device_class":"c",
                "components":[{"name":"a","path":"../../etc/passwd"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dir(dir.path()),
            Err(BundleIoError::UnsafePath(_))
        ));
    }

    #[test]
    fn invalid_base64_rejected() {
        let text = r#"{"name":"x","version":"1","device_class":"c",
            "components":[{"name":"a","content_b64":"!!!"}]}"#;
        let inline: InlineBundle = serde_json::from_str(text).unwrap();
        assert!(inline.into_bundle().is_err());
    }
}
