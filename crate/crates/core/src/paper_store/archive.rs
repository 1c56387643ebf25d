//! Zip export/import of a paper: `manifest.json` plus one `blobs/<sha256>`
//! entry per binary revision.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;
use zip::{ZipArchive, ZipWriter};

use super::{Content, ContentInput, FragmentKind, LinkParent, PaperError, PaperStatus, PaperStore};
use crate::ids::{FragmentId, PaperId, Tick, UserId};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub title: String,
    pub authors: Vec<UserId>,
    pub status: PaperStatus,
    pub fragments: Vec<ManifestFragment>,
    pub links: Vec<ManifestLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFragment {
    /// Id in the exporting store; links refer to fragments by this key.
    pub key: u64,
    pub kind: FragmentKind,
    pub revisions: Vec<Content>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLink {
    /// `None` for the paper root.
    pub parent: Option<u64>,
    pub child: u64,
    pub order_index: i64,
}

fn invalid(e: impl std::fmt::Display) -> PaperError {
    PaperError::InvalidArchive(e.to_string())
}

pub fn export_paper(store: &PaperStore, paper: PaperId) -> Result<Vec<u8>, PaperError> {
    let p = store.paper(paper)?;
    let fragments: Vec<ManifestFragment> = store
        .fragments_of(paper)
        .map(|f| ManifestFragment {
            key: f.fragment_id.0,
            kind: f.kind,
            revisions: f.revisions.iter().map(|r| r.content.clone()).collect(),
        })
        .collect();
    let links = store
        .links_of(paper)
        .iter()
        .map(|l| ManifestLink {
            parent: match l.parent {
                LinkParent::Root => None,
                LinkParent::Fragment(f) => Some(f.0),
            },
            child: l.child.0,
            order_index: l.order_index,
        })
        .collect();
    let manifest = Manifest {
        format: 1,
        title: p.title.clone(),
        authors: p.author_ids.clone(),
        status: p.status,
        fragments,
        links,
    };

    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default();
    zip.start_file(MANIFEST, options).map_err(invalid)?;
    zip.write_all(&serde_json::to_vec_pretty(&manifest).map_err(invalid)?)
        .map_err(invalid)?;
    let mut written = std::collections::BTreeSet::new();
    for f in &manifest.fragments {
        for content in &f.revisions {
            if let Content::Blob { digest, .. } = content {
                if written.insert(digest.clone()) {
                    let bytes = store.blob(digest).ok_or_else(|| invalid("missing blob"))?;
                    zip.start_file(format!("blobs/{digest}"), options).map_err(invalid)?;
                    zip.write_all(bytes).map_err(invalid)?;
                }
            }
        }
    }
    Ok(zip.finish().map_err(invalid)?.into_inner())
}

pub fn read_manifest(bytes: &[u8]) -> Result<Manifest, PaperError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(invalid)?;
    let mut entry = zip.by_name(MANIFEST).map_err(invalid)?;
    let mut raw = Vec::new();
    entry.read_to_end(&mut raw).map_err(invalid)?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(invalid)?;
    if manifest.format != 1 {
        return Err(invalid(format!("unsupported format {}", manifest.format)));
    }
    Ok(manifest)
}

/// Recreates an exported paper under fresh ids. Nothing is written unless the
/// whole archive imports cleanly.
pub fn import_paper(store: &mut PaperStore, bytes: &[u8], at: Tick) -> Result<PaperId, PaperError> {
    let manifest = read_manifest(bytes)?;
    let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(invalid)?;

    let mut staged = store.clone();
    let paper = staged.submit_paper(&manifest.title, &manifest.authors, at)?.paper_id;
    let mut ids: BTreeMap<u64, FragmentId> = BTreeMap::new();
    for f in &manifest.fragments {
        let mut revisions = f.revisions.iter();
        let first = revisions.next().ok_or_else(|| invalid("fragment without revisions"))?;
        let id = staged
            .add_fragment(paper, f.kind, read_content(&mut zip, first)?, at)?
            .fragment_id;
        for content in revisions {
            staged.revise_fragment(id, read_content(&mut zip, content)?, at)?;
        }
        if ids.insert(f.key, id).is_some() {
            return Err(invalid(format!("duplicate fragment key {}", f.key)));
        }
    }
    let lookup = |key: u64| ids.get(&key).copied().ok_or_else(|| invalid(format!("unknown fragment key {key}")));
    for link in &manifest.links {
        let parent = match link.parent {
            None => LinkParent::Root,
            Some(key) => LinkParent::Fragment(lookup(key)?),
        };
        staged.link_fragment(parent, lookup(link.child)?, link.order_index)?;
    }
    staged.set_status(paper, manifest.status)?;
    *store = staged;
    Ok(paper)
}

fn read_content(zip: &mut ZipArchive<Cursor<&[u8]>>, content: &Content) -> Result<ContentInput, PaperError> {
    match content {
        Content::Text(t) => Ok(ContentInput::Text(t.clone())),
        Content::Blob { digest, len } => {
            let mut entry = zip.by_name(&format!("blobs/{digest}")).map_err(invalid)?;
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(invalid)?;
            if hex::encode(Sha256::digest(&bytes)) != *digest || bytes.len() as u64 != *len {
                return Err(invalid(format!("blob {digest} does not match its digest")));
            }
            Ok(ContentInput::Binary(bytes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paper_store::PaperPolicy;

    #[test]
    fn export_import_preserves_structure_and_bytes() {
        let mut store = PaperStore::new(PaperPolicy::default());
        let paper = store.submit_paper("Living doc", &[UserId(1), UserId(2)], 0).unwrap().paper_id;
        let intro = store
            .add_fragment(paper, FragmentKind::Section, ContentInput::Text("Intro".into()), 0)
            .unwrap()
            .fragment_id;
        store.revise_fragment(intro, ContentInput::Text("Introduction".into()), 1).unwrap();
        let png: Vec<u8> = (0..=255u8).cycle().take(4096).collect();
        let chart = store
            .add_fragment(paper, FragmentKind::Chart, ContentInput::Binary(png.clone()), 2)
            .unwrap()
            .fragment_id;
        store.link_fragment(LinkParent::Root, intro, 0).unwrap();
        store.link_fragment(LinkParent::Fragment(intro), chart, 0).unwrap();

        let archive = export_paper(&store, paper).unwrap();
        let mut fresh = PaperStore::new(PaperPolicy::default());
        let copy = import_paper(&mut fresh, &archive, 9).unwrap();

        let doc = fresh.assemble_document(copy).unwrap();
        assert_eq!(doc.len(), 2);
        assert_eq!(doc[0].0.revisions.len(), 2);
        assert_eq!(doc[0].1.content, Content::Text("Introduction".into()));
        match &doc[1].1.content {
            Content::Blob { digest, .. } => assert_eq!(fresh.blob(digest).unwrap(), png.as_slice()),
            other => panic!("expected blob, got {other:?}"),
        }
        assert_eq!(fresh.paper(copy).unwrap().author_ids, vec![UserId(1), UserId(2)]);
    }

    #[test]
    fn corrupt_archive_leaves_store_untouched() {
        let mut store = PaperStore::new(PaperPolicy::default());
        let before = store.clone();
        assert_eq!(import_paper(&mut store, b"not a zip", 0).unwrap_err().code(), "INVALID_ARCHIVE");
        assert_eq!(store, before);
    }
}
