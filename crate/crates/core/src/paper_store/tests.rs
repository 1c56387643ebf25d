use super::*;
use proptest::prelude::*;

fn store() -> (PaperStore, PaperId) {
    let mut s = PaperStore::new(PaperPolicy::default());
    let p = s.submit_paper("A paper", &[UserId(0)], 0).unwrap().paper_id;
    (s, p)
}

fn text(s: &str) -> ContentInput {
    ContentInput::Text(s.into())
}

fn para(s: &mut PaperStore, p: PaperId, body: &str) -> FragmentId {
    s.add_fragment(p, FragmentKind::Paragraph, text(body), 0).unwrap().fragment_id
}

/// Recursive reference walk: visit children in (order_index, id) order and
/// keep only the first visit of each node.
fn dfs_oracle(edges: &[(Option<u64>, u64, i64)]) -> Vec<u64> {
    fn visit(node: Option<u64>, edges: &[(Option<u64>, u64, i64)], seen: &mut Vec<u64>) {
        let mut kids: Vec<(i64, u64)> =
            edges.iter().filter(|e| e.0 == node).map(|e| (e.2, e.1)).collect();
        kids.sort();
        for (_, k) in kids {
            if !seen.contains(&k) {
                seen.push(k);
                visit(Some(k), edges, seen);
            }
        }
    }
    let mut seen = Vec::new();
    visit(None, edges, &mut seen);
    seen
}

#[test]
fn revisions_are_append_only() {
    let (mut s, p) = store();
    let f = para(&mut s, p, "first");
    s.revise_fragment(f, text("second"), 1).unwrap();
    let frag = s.fragment(f).unwrap();
    assert_eq!(frag.revisions.iter().map(|r| r.revision).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(frag.revision(1).unwrap().content, Content::Text("first".into()));
    assert_eq!(frag.latest().content, Content::Text("second".into()));
}

#[test]
fn frozen_papers_reject_fragments() {
    let (mut s, p) = store();
    let f = para(&mut s, p, "x");
    s.set_status(p, PaperStatus::Frozen).unwrap();
    assert_eq!(
        s.add_fragment(p, FragmentKind::Paragraph, text("y"), 0).unwrap_err(),
        PaperError::PaperFrozen(p)
    );
    assert_eq!(s.revise_fragment(f, text("z"), 0).unwrap_err().code(), "PAPER_FROZEN");
    assert_eq!(
        s.set_status(p, PaperStatus::Living).unwrap_err().code(),
        "INVALID_TRANSITION"
    );
}

#[test]
fn empty_and_oversized_content() {
    let (mut s, p) = store();
    assert_eq!(
        s.add_fragment(p, FragmentKind::Paragraph, text("  "), 0).unwrap_err(),
        PaperError::EmptyContent
    );
    let mut small = PaperStore::new(PaperPolicy { max_fragment_bytes: 4 });
    let q = small.submit_paper("t", &[UserId(0)], 0).unwrap().paper_id;
    assert_eq!(
        small
            .add_fragment(q, FragmentKind::Figure, ContentInput::Binary(vec![1; 5]), 0)
            .unwrap_err()
            .code(),
        "CONTENT_TOO_LARGE"
    );
}

#[test]
fn chart_blob_round_trips_byte_identical() {
    let (mut s, p) = store();
    let bytes: Vec<u8> = (0..1000u32).map(|i| (i * 7 % 251) as u8).collect();
    let f = s
        .add_fragment(p, FragmentKind::Chart, ContentInput::Binary(bytes.clone()), 0)
        .unwrap()
        .fragment_id;
    let Content::Blob { digest, len } = &s.fragment(f).unwrap().latest().content else {
        panic!("binary content is stored by digest");
    };
    assert_eq!(*len, 1000);
    assert_eq!(s.blob(digest).unwrap(), bytes.as_slice());
}

#[test]
fn three_node_cycle_is_rejected() {
    let (mut s, p) = store();
    let a = para(&mut s, p, "a");
    let b = para(&mut s, p, "b");
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    s.link_fragment(LinkParent::Fragment(a), b, 0).unwrap();
    assert_eq!(
        s.link_fragment(LinkParent::Fragment(b), a, 0).unwrap_err().code(),
        "CYCLE_DETECTED"
    );
    assert_eq!(
        s.link_fragment(LinkParent::Fragment(a), a, 0).unwrap_err().code(),
        "CYCLE_DETECTED"
    );
}

#[test]
fn cross_paper_and_duplicate_links() {
    let (mut s, p) = store();
    let q = s.submit_paper("other", &[UserId(1)], 0).unwrap().paper_id;
    let a = para(&mut s, p, "a");
    let b = para(&mut s, q, "b");
    assert_eq!(
        s.link_fragment(LinkParent::Fragment(a), b, 0).unwrap_err(),
        PaperError::CrossPaperLink
    );
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    assert_eq!(s.link_fragment(LinkParent::Root, a, 1).unwrap_err().code(), "DUPLICATE_LINK");
}

#[test]
fn assembly_orders_by_order_index() {
    let (mut s, p) = store();
    assert!(s.assemble_document(p).unwrap().is_empty());
    let b = para(&mut s, p, "b");
    let a = para(&mut s, p, "a");
    s.link_fragment(LinkParent::Root, b, 1).unwrap();
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    let ids: Vec<_> = s.assemble_document(p).unwrap().iter().map(|(f, _)| f.fragment_id).collect();
    assert_eq!(ids, vec![a, b]);
}

#[test]
fn chain_assembles_depth_first() {
    let (mut s, p) = store();
    let a = para(&mut s, p, "a");
    let b = para(&mut s, p, "b");
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    s.link_fragment(LinkParent::Fragment(a), b, 0).unwrap();
    let ids: Vec<_> = s.assemble_document(p).unwrap().iter().map(|(f, _)| f.fragment_id).collect();
    assert_eq!(ids, vec![a, b]);
}

#[test]
fn diamond_visits_shared_child_once() {
    let (mut s, p) = store();
    let a = para(&mut s, p, "a");
    let b = para(&mut s, p, "b");
    let c = para(&mut s, p, "c");
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    s.link_fragment(LinkParent::Root, b, 1).unwrap();
    s.link_fragment(LinkParent::Fragment(a), c, 0).unwrap();
    s.link_fragment(LinkParent::Fragment(b), c, 0).unwrap();
    let ids: Vec<u64> =
        s.assemble_document(p).unwrap().iter().map(|(f, _)| f.fragment_id.0).collect();
    let oracle = dfs_oracle(&[
        (None, a.0, 0),
        (None, b.0, 1),
        (Some(a.0), c.0, 0),
        (Some(b.0), c.0, 0),
    ]);
    assert_eq!(oracle, vec![a.0, c.0, b.0]);
    assert_eq!(ids, oracle);
}

#[test]
fn assembly_uses_latest_revision() {
    let (mut s, p) = store();
    let a = para(&mut s, p, "v1");
    s.link_fragment(LinkParent::Root, a, 0).unwrap();
    s.revise_fragment(a, text("v2"), 1).unwrap();
    let doc = s.assemble_document(p).unwrap();
    assert_eq!(doc[0].1.revision, 2);
}

#[test]
fn anchors_pin_their_revision() {
    let (mut s, p) = store();
    let f = para(&mut s, p, "Hello world");
    let anchor = s.create_anchor(f, 1, Some(Span { start: 0, end: 5 })).unwrap().anchor_id;
    s.revise_fragment(f, text("Goodbye world"), 1).unwrap();
    s.revise_fragment(f, text("Farewell"), 2).unwrap();
    let resolved = s.resolve_anchor(anchor).unwrap();
    assert_eq!(resolved.revision, 1);
    assert_eq!(resolved.content, Content::Text("Hello world".into()));
    assert_eq!(resolved.span_text.as_deref(), Some("Hello"));
}

#[test]
fn anchor_validation() {
    let (mut s, p) = store();
    let f = para(&mut s, p, "Hello world");
    assert_eq!(
        s.create_anchor(f, 1, Some(Span { start: 3, end: 40 })).unwrap_err().code(),
        "SPAN_OUT_OF_BOUNDS"
    );
    assert_eq!(s.create_anchor(f, 2, None).unwrap_err().code(), "UNKNOWN_REVISION");
    assert_eq!(s.resolve_anchor(AnchorId(0)).unwrap_err().code(), "UNKNOWN_ANCHOR");
    let fig = s
        .add_fragment(p, FragmentKind::Figure, ContentInput::Binary(vec![1, 2, 3]), 0)
        .unwrap()
        .fragment_id;
    assert_eq!(
        s.create_anchor(fig, 1, Some(Span { start: 0, end: 1 })).unwrap_err(),
        PaperError::SpanOnBinary
    );
    s.create_anchor(fig, 1, None).unwrap();
}

#[test]
fn span_offsets_count_characters() {
    let (mut s, p) = store();
    let f = para(&mut s, p, "naïve café");
    let a = s.create_anchor(f, 1, Some(Span { start: 6, end: 10 })).unwrap().anchor_id;
    assert_eq!(s.resolve_anchor(a).unwrap().span_text.as_deref(), Some("café"));
}

/// Kahn's algorithm; true when the edge set admits a topological order.
fn topologically_sortable(nodes: usize, edges: &[(usize, usize)]) -> bool {
    let mut indegree = vec![0usize; nodes];
    for &(_, c) in edges {
        indegree[c] += 1;
    }
    let mut ready: Vec<usize> = (0..nodes).filter(|&n| indegree[n] == 0).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for &(_, c) in edges.iter().filter(|e| e.0 == n) {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    seen == nodes
}

proptest! {
    #[test]
    fn random_links_never_create_cycles(
        n in 2usize..12,
        raw in prop::collection::vec((0usize..12, 0usize..12, -3i64..3), 0..60),
    ) {
        let (mut s, p) = store();
        let ids: Vec<FragmentId> = (0..n).map(|i| para(&mut s, p, &format!("f{i}"))).collect();
        let mut accepted = Vec::new();
        for (a, b, order) in raw {
            let (a, b) = (a % n, b % n);
            if s.link_fragment(LinkParent::Fragment(ids[a]), ids[b], order).is_ok() {
                accepted.push((a, b));
            }
        }
        prop_assert!(topologically_sortable(n, &accepted));
    }

    #[test]
    fn assembly_matches_recursive_oracle(
        n in 1usize..10,
        raw in prop::collection::vec((0usize..11, 0usize..10, 0i64..4), 0..40),
    ) {
        let (mut s, p) = store();
        let ids: Vec<FragmentId> = (0..n).map(|i| para(&mut s, p, &format!("f{i}"))).collect();
        let mut edges = Vec::new();
        for (a, b, order) in raw {
            let child = ids[b % n];
            // parent index n stands for the root
            let parent = if a % (n + 1) == n { LinkParent::Root } else { LinkParent::Fragment(ids[a % (n + 1)]) };
            if s.link_fragment(parent, child, order).is_ok() {
                let parent = match parent { LinkParent::Root => None, LinkParent::Fragment(f) => Some(f.0) };
                edges.push((parent, child.0, order));
            }
        }
        let got: Vec<u64> = s.assemble_document(p).unwrap().iter().map(|(f, _)| f.fragment_id.0).collect();
        prop_assert_eq!(&got, &dfs_oracle(&edges));
        let again: Vec<u64> = s.assemble_document(p).unwrap().iter().map(|(f, _)| f.fragment_id.0).collect();
        prop_assert_eq!(got, again);
    }
}
