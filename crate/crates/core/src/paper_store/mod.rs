//! Fragment-based paper hosting.
//!
//! A paper is assembled from independently submitted fragments (paragraphs,
//! figures, charts, ...) linked into a rooted DAG. Fragment revisions are
//! append-only, and anchors pin a specific revision so discussions attached to
//! them never drift onto newer text.

pub mod archive;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{AnchorId, FragmentId, PaperId, Tick, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PaperStatus {
    Draft,
    Living,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paper {
    pub paper_id: PaperId,
    pub title: String,
    pub author_ids: Vec<UserId>,
    pub status: PaperStatus,
    pub created_at: Tick,
}

impl Paper {
    pub fn is_author(&self, user: UserId) -> bool {
        self.author_ids.contains(&user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FragmentKind {
    Paragraph,
    Section,
    Figure,
    Chart,
    Table,
}

/// Content as submitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentInput {
    Text(String),
    Binary(#[serde(with = "crate::b64")] Vec<u8>),
}

/// Content as stored: text inline, binary by SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    Text(String),
    Blob { digest: String, len: u64 },
}

impl Content {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Content::Text(t) => Some(t),
            Content::Blob { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub revision: u32,
    pub content: Content,
    pub created_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub fragment_id: FragmentId,
    pub paper_id: PaperId,
    pub kind: FragmentKind,
    /// Dense, starting at revision 1.
    pub revisions: Vec<Revision>,
}

impl Fragment {
    pub fn latest(&self) -> &Revision {
        self.revisions.last().expect("fragments always have a first revision")
    }

    pub fn revision(&self, revision: u32) -> Option<&Revision> {
        (revision >= 1).then(|| self.revisions.get(revision as usize - 1)).flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkParent {
    Root,
    Fragment(FragmentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentLink {
    pub paper_id: PaperId,
    pub parent: LinkParent,
    pub child: FragmentId,
    pub order_index: i64,
}

/// Character offsets `[start, end)` into a revision's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub anchor_id: AnchorId,
    pub fragment_id: FragmentId,
    pub revision: u32,
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedAnchor {
    pub paper_id: PaperId,
    pub fragment_id: FragmentId,
    pub revision: u32,
    pub content: Content,
    pub span_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaperPolicy {
    pub max_fragment_bytes: u64,
}

impl Default for PaperPolicy {
    fn default() -> Self {
        Self { max_fragment_bytes: 10 * 1024 * 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaperError {
    #[error("unknown paper {0}")]
    UnknownPaper(PaperId),
    #[error("unknown fragment {0}")]
    UnknownFragment(FragmentId),
    #[error("unknown anchor {0}")]
    UnknownAnchor(AnchorId),
    #[error("fragment {fragment} has no revision {revision}")]
    UnknownRevision { fragment: FragmentId, revision: u32 },
    #[error("paper {0} is frozen")]
    PaperFrozen(PaperId),
    #[error("content must be non-empty")]
    EmptyContent,
    #[error("title must be non-empty")]
    EmptyTitle,
    #[error("a paper needs at least one author")]
    NoAuthors,
    #[error("content of {size} bytes exceeds the {limit} byte limit")]
    ContentTooLarge { size: u64, limit: u64 },
    #[error("linking {child} under {parent:?} would create a cycle")]
    CycleDetected { parent: LinkParent, child: FragmentId },
    #[error("fragments belong to different papers")]
    CrossPaperLink,
    #[error("link {parent:?} -> {child} already exists")]
    DuplicateLink { parent: LinkParent, child: FragmentId },
    #[error("span {start}..{end} is outside content of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("spans need textual content")]
    SpanOnBinary,
    #[error("user {user} is not an author of {paper}")]
    NotAuthor { user: UserId, paper: PaperId },
    #[error("paper cannot move from {from:?} to {to:?}")]
    InvalidTransition { from: PaperStatus, to: PaperStatus },
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
}

impl PaperError {
    pub fn code(&self) -> &'static str {
        match self {
            PaperError::UnknownPaper(_) => "UNKNOWN_PAPER",
            PaperError::UnknownFragment(_) => "UNKNOWN_FRAGMENT",
            PaperError::UnknownAnchor(_) => "UNKNOWN_ANCHOR",
            PaperError::UnknownRevision { .. } => "UNKNOWN_REVISION",
            PaperError::PaperFrozen(_) => "PAPER_FROZEN",
            PaperError::EmptyContent => "EMPTY_CONTENT",
            PaperError::EmptyTitle | PaperError::NoAuthors => "VALIDATION_ERROR",
            PaperError::ContentTooLarge { .. } => "CONTENT_TOO_LARGE",
            PaperError::CycleDetected { .. } => "CYCLE_DETECTED",
            PaperError::CrossPaperLink => "CROSS_PAPER_LINK",
            PaperError::DuplicateLink { .. } => "DUPLICATE_LINK",
            PaperError::SpanOutOfBounds { .. } => "SPAN_OUT_OF_BOUNDS",
            PaperError::SpanOnBinary => "SPAN_ON_BINARY",
            PaperError::NotAuthor { .. } => "NOT_AUTHOR",
            PaperError::InvalidTransition { .. } => "INVALID_TRANSITION",
            PaperError::InvalidArchive(_) => "INVALID_ARCHIVE",
        }
    }
}

type Result<T, E = PaperError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Blob(#[serde(with = "crate::b64")] Vec<u8>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperStore {
    policy: PaperPolicy,
    papers: Vec<Paper>,
    fragments: Vec<Fragment>,
    anchors: Vec<Anchor>,
    /// Outgoing edges per paper, keyed by parent.
    links: BTreeMap<PaperId, Vec<FragmentLink>>,
    blobs: BTreeMap<String, Blob>,
}

impl PaperStore {
    pub fn new(policy: PaperPolicy) -> Self {
        Self {
            policy,
            papers: Vec::new(),
            fragments: Vec::new(),
            anchors: Vec::new(),
            links: BTreeMap::new(),
            blobs: BTreeMap::new(),
        }
    }

    pub fn submit_paper(&mut self, title: &str, authors: &[UserId], at: Tick) -> Result<&Paper> {
        let title = title.trim();
        if title.is_empty() {
            return Err(PaperError::EmptyTitle);
        }
        let mut author_ids = Vec::with_capacity(authors.len());
        for a in authors {
            if !author_ids.contains(a) {
                author_ids.push(*a);
            }
        }
        if author_ids.is_empty() {
            return Err(PaperError::NoAuthors);
        }
        let paper_id = PaperId::from_index(self.papers.len());
        self.papers.push(Paper {
            paper_id,
            title: title.to_string(),
            author_ids,
            status: PaperStatus::Living,
            created_at: at,
        });
        Ok(&self.papers[paper_id.index()])
    }

    pub fn paper(&self, id: PaperId) -> Result<&Paper> {
        self.papers.get(id.index()).ok_or(PaperError::UnknownPaper(id))
    }

    pub fn papers(&self) -> &[Paper] {
        &self.papers
    }

    /// `DRAFT -> LIVING -> FROZEN`; a draft may also be frozen directly.
    pub fn set_status(&mut self, id: PaperId, to: PaperStatus) -> Result<&Paper> {
        let from = self.paper(id)?.status;
        let allowed = matches!(
            (from, to),
            (PaperStatus::Draft, PaperStatus::Living)
                | (PaperStatus::Draft, PaperStatus::Frozen)
                | (PaperStatus::Living, PaperStatus::Frozen)
        ) || from == to;
        if !allowed {
            return Err(PaperError::InvalidTransition { from, to });
        }
        self.papers[id.index()].status = to;
        Ok(&self.papers[id.index()])
    }

    fn writable(&self, id: PaperId) -> Result<&Paper> {
        let paper = self.paper(id)?;
        if paper.status == PaperStatus::Frozen {
            return Err(PaperError::PaperFrozen(id));
        }
        Ok(paper)
    }

    pub fn require_author(&self, paper: PaperId, user: UserId) -> Result<()> {
        if self.paper(paper)?.is_author(user) {
            Ok(())
        } else {
            Err(PaperError::NotAuthor { user, paper })
        }
    }

    fn check_content(&self, content: &ContentInput) -> Result<()> {
        let size = match content {
            ContentInput::Text(t) if t.trim().is_empty() => return Err(PaperError::EmptyContent),
            ContentInput::Binary(b) if b.is_empty() => return Err(PaperError::EmptyContent),
            ContentInput::Text(t) => t.len() as u64,
            ContentInput::Binary(b) => b.len() as u64,
        };
        if size > self.policy.max_fragment_bytes {
            return Err(PaperError::ContentTooLarge { size, limit: self.policy.max_fragment_bytes });
        }
        Ok(())
    }

    fn store_content(&mut self, content: ContentInput) -> Content {
        match content {
            ContentInput::Text(t) => Content::Text(t),
            ContentInput::Binary(bytes) => {
                let digest = hex::encode(Sha256::digest(&bytes));
                let len = bytes.len() as u64;
                self.blobs.entry(digest.clone()).or_insert(Blob(bytes));
                Content::Blob { digest, len }
            }
        }
    }

    pub fn blob(&self, digest: &str) -> Option<&[u8]> {
        self.blobs.get(digest).map(|b| b.0.as_slice())
    }

    pub fn add_fragment(
        &mut self,
        paper: PaperId,
        kind: FragmentKind,
        content: ContentInput,
        at: Tick,
    ) -> Result<&Fragment> {
        self.writable(paper)?;
        self.check_content(&content)?;
        let content = self.store_content(content);
        let fragment_id = FragmentId::from_index(self.fragments.len());
        self.fragments.push(Fragment {
            fragment_id,
            paper_id: paper,
            kind,
            revisions: vec![Revision { revision: 1, content, created_at: at }],
        });
        Ok(&self.fragments[fragment_id.index()])
    }

    pub fn revise_fragment(&mut self, id: FragmentId, content: ContentInput, at: Tick) -> Result<&Fragment> {
        let paper = self.fragment(id)?.paper_id;
        self.writable(paper)?;
        self.check_content(&content)?;
        let content = self.store_content(content);
        let fragment = &mut self.fragments[id.index()];
        let revision = fragment.revisions.len() as u32 + 1;
        fragment.revisions.push(Revision { revision, content, created_at: at });
        Ok(fragment)
    }

    pub fn fragment(&self, id: FragmentId) -> Result<&Fragment> {
        self.fragments.get(id.index()).ok_or(PaperError::UnknownFragment(id))
    }

    pub fn fragments_of(&self, paper: PaperId) -> impl Iterator<Item = &Fragment> {
        self.fragments.iter().filter(move |f| f.paper_id == paper)
    }

    pub fn links_of(&self, paper: PaperId) -> &[FragmentLink] {
        self.links.get(&paper).map(Vec::as_slice).unwrap_or(&[])
    }

    fn children(&self, paper: PaperId, parent: LinkParent) -> Vec<(i64, FragmentId)> {
        let mut kids: Vec<_> = self
            .links_of(paper)
            .iter()
            .filter(|l| l.parent == parent)
            .map(|l| (l.order_index, l.child))
            .collect();
        kids.sort();
        kids
    }

    /// True if `to` is reachable from `from` along existing links.
    fn reaches(&self, paper: PaperId, from: FragmentId, to: FragmentId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(node) = stack.pop() {
            if node == to {
                return true;
            }
            if seen.insert(node) {
                stack.extend(
                    self.links_of(paper)
                        .iter()
                        .filter(|l| l.parent == LinkParent::Fragment(node))
                        .map(|l| l.child),
                );
            }
        }
        false
    }

    pub fn link_fragment(
        &mut self,
        parent: LinkParent,
        child: FragmentId,
        order_index: i64,
    ) -> Result<&FragmentLink> {
        let paper = self.fragment(child)?.paper_id;
        if let LinkParent::Fragment(p) = parent {
            if self.fragment(p)?.paper_id != paper {
                return Err(PaperError::CrossPaperLink);
            }
        }
        self.writable(paper)?;
        if self.links_of(paper).iter().any(|l| l.parent == parent && l.child == child) {
            return Err(PaperError::DuplicateLink { parent, child });
        }
        if let LinkParent::Fragment(p) = parent {
            if self.reaches(paper, child, p) {
                return Err(PaperError::CycleDetected { parent, child });
            }
        }
        let edges = self.links.entry(paper).or_default();
        edges.push(FragmentLink { paper_id: paper, parent, child, order_index });
        Ok(edges.last().expect("just pushed"))
    }

    /// Depth-first walk from the root, children ordered by
    /// `(order_index, fragment_id)`; fragments reachable by several paths
    /// appear once, at their first visit. Unlinked fragments are omitted.
    pub fn assemble_document(&self, paper: PaperId) -> Result<Vec<(&Fragment, &Revision)>> {
        self.paper(paper)?;
        let mut order = Vec::new();
        let mut visited = BTreeSet::new();
        let mut stack: Vec<FragmentId> =
            self.children(paper, LinkParent::Root).into_iter().rev().map(|(_, f)| f).collect();
        while let Some(node) = stack.pop() {
            if !visited.insert(node) {
                continue;
            }
            order.push(node);
            stack.extend(
                self.children(paper, LinkParent::Fragment(node))
                    .into_iter()
                    .rev()
                    .map(|(_, f)| f),
            );
        }
        Ok(order
            .into_iter()
            .map(|id| {
                let f = &self.fragments[id.index()];
                (f, f.latest())
            })
            .collect())
    }

    pub fn create_anchor(&mut self, fragment: FragmentId, revision: u32, span: Option<Span>) -> Result<&Anchor> {
        let frag = self.fragment(fragment)?;
        let rev = frag
            .revision(revision)
            .ok_or(PaperError::UnknownRevision { fragment, revision })?;
        if let Some(span) = span {
            let text = rev.content.as_text().ok_or(PaperError::SpanOnBinary)?;
            let len = text.chars().count();
            if span.start > span.end || span.end > len {
                return Err(PaperError::SpanOutOfBounds { start: span.start, end: span.end, len });
            }
        }
        let anchor_id = AnchorId::from_index(self.anchors.len());
        self.anchors.push(Anchor { anchor_id, fragment_id: fragment, revision, span });
        Ok(&self.anchors[anchor_id.index()])
    }

    pub fn anchor(&self, id: AnchorId) -> Result<&Anchor> {
        self.anchors.get(id.index()).ok_or(PaperError::UnknownAnchor(id))
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Content of the exact revision the anchor was created against.
    pub fn resolve_anchor(&self, id: AnchorId) -> Result<ResolvedAnchor> {
        let anchor = self.anchor(id)?;
        let fragment = &self.fragments[anchor.fragment_id.index()];
        let rev = fragment
            .revision(anchor.revision)
            .expect("anchors are validated against existing revisions");
        let span_text = anchor.span.map(|span| {
            rev.content
                .as_text()
                .map(|t| t.chars().skip(span.start).take(span.end - span.start).collect())
                .unwrap_or_default()
        });
        Ok(ResolvedAnchor {
            paper_id: fragment.paper_id,
            fragment_id: fragment.fragment_id,
            revision: anchor.revision,
            content: rev.content.clone(),
            span_text,
        })
    }
}

#[cfg(test)]
mod tests;
