mod common;

use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use common::*;
use treerag_core::answerer::{build_prompt, parse_answer, AnswerRecord, AnswerValue, PromptOrder};
use treerag_core::doctree::{is_ancestor, parse_plaintext, DocumentTree, Level, NodeId, SegmentationRules};
use treerag_core::embedder::{embed_tree, MockEncoder, Vector};
use treerag_core::ensembler::{normalize_answer, numbers_close, run_seed, vote, VoteConfig, VoteMode};
use treerag_core::evalkit::{classify_error, ref_score, score, ErrorCategory};
use treerag_core::ensembler::UnitTable;
use treerag_core::pipeline::PipelineConfig;
use treerag_core::retriever::{dedup_nodes, rerank, DedupMode, RerankStrategy};
use treerag_core::sparse::{augment, Bm25Index, TokenizerConfig, DEFAULT_B, DEFAULT_K1};
use treerag_core::vectorstore::{decode, encode, Index, SearchFilter};

fn node_id() -> impl Strategy<Value = NodeId> {
    ("[a-z][a-z0-9_]{0,6}", 1u32..20, 1u32..20, 1u32..20, 0usize..4).prop_map(|(d, s, p, k, depth)| {
        let mut id = NodeId::document(&d).unwrap();
        for i in [s, p, k].into_iter().take(depth) {
            id = id.child(i).unwrap();
        }
        id
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn node_id_round_trips_and_orders_ancestors_first(a in node_id(), b in node_id()) {
        let back: NodeId = a.as_str().parse().unwrap();
        prop_assert_eq!(&back, &a);
        prop_assert_eq!(a.level() as usize, a.as_str().matches(':').count());
        if is_ancestor(&a, &b) {
            prop_assert!(a < b);
            prop_assert!(!is_ancestor(&b, &a));
        }
        if let Some(p) = a.parent() {
            prop_assert!(is_ancestor(&p, &a));
        }
    }

    #[test]
    fn plaintext_parse_is_valid_and_round_trips(text in "[A-Za-z0-9 .,!?#\\n-]{0,400}") {
        if let Ok(tree) = parse_plaintext("doc", &text, &SegmentationRules::default()) {
            let again = DocumentTree::from_json(&tree.to_json()).unwrap();
            prop_assert_eq!(&again, &tree);
            let counts = tree.level_counts();
            prop_assert_eq!(counts[0], 1);
            prop_assert!(counts[3] >= 1);
            for n in tree.nodes() {
                for c in &n.children {
                    prop_assert_eq!(tree.get(c).unwrap().parent.as_ref(), Some(&n.id));
                }
            }
        }
    }

    #[test]
    fn embeddings_stay_in_the_unit_ball(seed in any::<u64>(), dim in 1usize..24) {
        let mut rng = rng(seed);
        let tree = random_tree(&mut rng, "t", 40);
        let embs = embed_tree(&tree, &MockEncoder::new(dim, seed)).unwrap();
        prop_assert_eq!(embs.len(), tree.len());
        for n in tree.nodes() {
            let norm = embs[&n.id].vector.norm();
            if n.children.is_empty() {
                prop_assert!((norm - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(norm <= 1.0 + 1e-9);
            }
            prop_assert_eq!(embs[&n.id].weight, leaf_weights_sum(&tree, &n.id));
        }
    }

    #[test]
    fn kindex_round_trips_and_search_is_well_formed(seed in any::<u64>(), dim in 1usize..6, k in 1usize..40) {
        let mut rng = rng(seed);
        let (rows, vectors) = random_rows(&mut rng, 60, dim);
        let index = Index::from_parts("p", dim, rows, vectors, None).unwrap();
        let bytes = encode(&index);
        let back = decode(&bytes).unwrap();
        prop_assert!(back == index);
        prop_assert_eq!(encode(&back), bytes);

        let filter = SearchFilter::new(&[Level::Paragraph, Level::Sentence], false).unwrap();
        let q = Vector::new((0..dim).map(|i| i as f64 - 1.5).collect()).unwrap();
        let hits = index.search(&q, k, &filter).unwrap();
        let admitted = index.rows().iter().filter(|r| filter.admits(r)).count();
        prop_assert_eq!(hits.len(), k.min(admitted));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].node < w[1].node));
        }
        for h in &hits {
            prop_assert!(filter.admits(index.node(&h.node).unwrap()));
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&h.score));
        }
    }

    #[test]
    fn kindex_decoder_rejects_mutations_without_panicking(
        seed in any::<u64>(),
        flips in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..4),
        cut in any::<prop::sample::Index>(),
    ) {
        let mut rng = rng(seed);
        let (rows, vectors) = random_rows(&mut rng, 20, 3);
        let bytes = encode(&Index::from_parts("p", 3, rows, vectors, None).unwrap());
        let mut mutated = bytes.clone();
        let mut seen = HashSet::new();
        for (at, b) in flips {
            let i = at.index(mutated.len());
            if seen.insert(i) {
                mutated[i] ^= b | 1;
            }
        }
        prop_assert!(decode(&mutated).is_err());
        let _ = decode(&bytes[..cut.index(bytes.len())]);
    }

    #[test]
    fn bm25_scores_and_augment(seed in any::<u64>(), k in 0usize..10) {
        let mut rng = rng(seed);
        let docs: Vec<(NodeId, String)> =
            (1..=12).map(|i| (id(&format!("d:sec1:p{i}")), words(&mut rng, 1, 12))).collect();
        let Ok(index) = Bm25Index::build(
            docs.iter().map(|(i, t)| (i.clone(), t.as_str())),
            TokenizerConfig::default(),
            DEFAULT_K1,
            DEFAULT_B,
        ) else { return Ok(()) };
        let query = words(&mut rng, 1, 5);
        let sparse = index.search(&query, 12);
        prop_assert!(sparse.iter().all(|h| h.score > 0.0));
        let dense: Vec<_> = index.search(&words(&mut rng, 1, 3), 3);
        let merged = augment(dense.clone(), &sparse, k);
        prop_assert_eq!(&merged[..dense.len()], &dense[..]);
        prop_assert!(merged.len() <= dense.len() + k);
        let ids: HashSet<_> = merged.iter().map(|h| &h.node).collect();
        prop_assert_eq!(ids.len(), merged.len());
    }

    #[test]
    fn rerank_lists_each_node_once(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let mut rng = rng(seed);
        let lists = random_hit_lists(&mut rng);
        let universe: BTreeSet<_> = lists.iter().flatten().map(|h| h.node.clone()).collect();
        for s in [RerankStrategy::Frequency, RerankStrategy::Score, RerankStrategy::Combined] {
            let out = rerank(&lists, s, alpha);
            let ids: BTreeSet<_> = out.iter().map(|e| e.node.clone()).collect();
            prop_assert_eq!(ids.len(), out.len());
            prop_assert_eq!(&ids, &universe);
            prop_assert!(out.iter().all(|e| e.frequency >= 1 && e.frequency <= lists.len()));
            let first_sparse = out.iter().position(|e| e.sparse_only).unwrap_or(out.len());
            prop_assert!(out[first_sparse..].iter().all(|e| e.sparse_only));
        }
    }

    #[test]
    fn dedup_modes_nest(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let snippets = random_snippets(&mut rng);
        let by_id = dedup_nodes(snippets.clone(), DedupMode::ById);
        let tree = dedup_nodes(snippets.clone(), DedupMode::Tree);
        let id_set: HashSet<_> = by_id.iter().map(|s| &s.node).collect();
        prop_assert_eq!(id_set.len(), by_id.len());
        prop_assert!(tree.iter().all(|s| id_set.contains(&s.node)));
        // every dropped node has a surviving ancestor or is a duplicate
        for s in &snippets {
            if !tree.iter().any(|t| t.node == s.node) {
                prop_assert!(snippets.iter().any(|o| is_ancestor(&o.node, &s.node)));
            }
        }
    }

    #[test]
    fn prompt_budget_holds(seed in any::<u64>(), budget in 1usize..400) {
        let mut rng = rng(seed);
        let snippets = random_snippets(&mut rng);
        match build_prompt(&snippets, "What?", PromptOrder::ContextFirst, budget) {
            Ok(b) => {
                prop_assert!(b.context_tokens <= budget);
                prop_assert_eq!(b.retained_snippets + b.dropped_snippets, snippets.len());
            }
            Err(_) => prop_assert!(!snippets.is_empty()),
        }
    }

    #[test]
    fn answer_parsing_never_panics_and_round_trips(raw in ".{0,200}", value in -1e9f64..1e9) {
        let _ = parse_answer(&raw);
        let rec = AnswerRecord::answered("x", AnswerValue::Number(value), &["d1"]);
        let wrapped = format!("Here you go:\n```json\n{}\n```", rec.render());
        prop_assert_eq!(parse_answer(&wrapped).unwrap(), rec);
    }

    #[test]
    fn numeric_closeness_is_symmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        prop_assert_eq!(numbers_close(a, b), numbers_close(b, a));
        prop_assert!(numbers_close(a, a));
    }

    #[test]
    fn scores_are_bounded(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let recs = random_records(&mut rng, 2);
        let (p, t) = (&recs[0], &recs[1]);
        let s = score(p, t, &UnitTable::default());
        prop_assert!((0.0..=1.0).contains(&s.final_score));
        prop_assert_eq!(ref_score(&p.ref_id, &t.ref_id), ref_score(&t.ref_id, &p.ref_id));
        let same = score(t, t, &UnitTable::default());
        prop_assert_eq!(same.final_score, 1.0);
        prop_assert_eq!(classify_error(t, t), ErrorCategory::Correct);
    }

    #[test]
    fn voted_answer_comes_from_some_run(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = rng(seed);
        let records = random_records(&mut rng, n);
        for mode in VoteMode::ALL {
            let out = vote(&records, &VoteConfig { mode, ignore_blank: true });
            let v = normalize_answer(&out);
            prop_assert!(records.iter().any(|r| normalize_answer(r).matches(&v)));
            if !out.is_blank {
                prop_assert!(records.iter().any(|r| r.answer == out.answer));
            }
        }
    }

    #[test]
    fn run_seeds_are_deterministic(root in any::<u64>(), q in "[a-z0-9]{1,8}", run in 0usize..64) {
        prop_assert_eq!(run_seed(root, &q, run), run_seed(root, &q, run));
        prop_assert_ne!(run_seed(root, &q, run), run_seed(root, &q, run + 1));
    }

    #[test]
    fn config_dump_round_trips(
        seed in any::<u64>(),
        topk in 1usize..100,
        alpha in 0.0f64..=1.0,
        temp in 0.0f64..2.0,
        size in 1usize..9,
        mode in 0usize..5,
    ) {
        let mut cfg = PipelineConfig { seed, ..PipelineConfig::default() };
        cfg.retriever.topk = topk;
        cfg.retriever.alpha = alpha;
        cfg.answerer.temperature = temp;
        cfg.ensemble.size = size;
        cfg.ensemble.vote_mode = VoteMode::ALL[mode];
        cfg.ensemble.units.insert("t".into(), 1e6);
        cfg.chat.replay = Some("replay \"x\".json".into());
        let back = PipelineConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
