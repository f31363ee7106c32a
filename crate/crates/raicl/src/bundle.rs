//! Self-contained JSON serialization of prompt bundles, images inlined as
//! base64, so `select` output can be replayed by `query`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use raicl_core::prompt::{ImageRole, PromptPart};
use raicl_core::{ClassLabel, PromptBundle, Tier, TrialRef};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BundleFileError {
    #[error("malformed bundle file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad base64 image: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("bundle digest {stored} does not match its contents ({computed})")]
    Digest { stored: String, computed: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FilePart {
    Text {
        text: String,
    },
    Image {
        role: ImageRole,
        png_base64: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<TrialRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<ClassLabel>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleFile {
    digest: String,
    tier: Tier,
    query: Option<TrialRef>,
    parts: Vec<FilePart>,
}

pub fn to_json(bundle: &PromptBundle) -> String {
    let parts = bundle
        .parts
        .iter()
        .map(|p| match p {
            PromptPart::Text { text } => FilePart::Text { text: text.clone() },
            PromptPart::Image { role, png, source, label } => FilePart::Image {
                role: role.clone(),
                png_base64: STANDARD.encode(png),
                source: source.clone(),
                label: *label,
            },
        })
        .collect();
    let file = BundleFile {
        digest: bundle.digest.clone(),
        tier: bundle.tier,
        query: bundle.query.clone(),
        parts,
    };
    serde_json::to_string_pretty(&file).expect("bundle serializes") + "\n"
}

/// Parses and checks the stored digest against the decoded parts.
pub fn from_json(text: &str) -> Result<PromptBundle, BundleFileError> {
    let file: BundleFile = serde_json::from_str(text)?;
    let parts = file
        .parts
        .into_iter()
        .map(|p| {
            Ok(match p {
                FilePart::Text { text } => PromptPart::Text { text },
                FilePart::Image { role, png_base64, source, label } => PromptPart::Image {
                    role,
                    png: STANDARD.decode(png_base64)?.into(),
                    source,
                    label,
                },
            })
        })
        .collect::<Result<Vec<_>, BundleFileError>>()?;
    let computed = PromptBundle::compute_digest(&parts);
    if computed != file.digest {
        return Err(BundleFileError::Digest {
            stored: file.digest,
            computed,
        });
    }
    Ok(PromptBundle {
        parts,
        tier: file.tier,
        query: file.query,
        digest: computed,
    })
}
