use super::*;
use proptest::prelude::*;

fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(entries[0].1.len()).unwrap();
    for (w, v) in entries {
        t.insert(*w, v.to_vec()).unwrap();
    }
    t
}

fn parse(text: &str) -> Result<EmbeddingTable> {
    EmbeddingTable::parse(text, Path::new("vectors.txt"))
}

#[test]
fn load_examples() {
    let t = parse("a 1 0 0\nb 0 1 0\n").unwrap();
    assert_eq!((t.len(), t.dim()), (2, 3));
    let t = parse("3 2\na 1 0\nb 0 1\na 5 5\n").unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.get("a").unwrap(), &[1.0, 0.0]);
    match parse("a 1 0\nb 1 0 0\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(parse("").is_err());
    assert!(parse("a x y\n").is_err());
    assert!(parse("lonely\n").is_err());
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.txt");
    std::fs::write(&p, "hi 0.5 0.5\n").unwrap();
    assert_eq!(load_embeddings(&p).unwrap().len(), 1);
    assert!(load_embeddings(&dir.path().join("missing.txt")).is_err());
}

#[test]
fn average_examples() {
    let s = 1.0 / 2f64.sqrt();
    let t = table(&[("a", &[1.0, 0.0]), ("b", &[s, s]), ("c", &[0.0, 1.0])]);
    assert!((embedding_average(&["a"], &["a"], &t).unwrap() - 1.0).abs() < 1e-12);
    assert!(embedding_average(&["a"], &["c"], &t).unwrap().abs() < 1e-12);
    assert!((embedding_average(&["a"], &["b"], &t).unwrap() - s).abs() < 1e-12);
    assert_eq!(embedding_average(&["zz"], &["a"], &t), None);
    assert_eq!(embedding_average::<&str, &str>(&[], &["a"], &t), None);
}

#[test]
fn average_of_cancelling_vectors_is_undefined() {
    let t = table(&[("a", &[1.0, 0.0]), ("m", &[-1.0, 0.0])]);
    assert_eq!(embedding_average(&["a", "m"], &["a"], &t), None);
}

#[test]
fn greedy_examples() {
    let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 0.0])]);
    assert!((embedding_greedy(&["a"], &["b", "c"], &t).unwrap() - 0.75).abs() < 1e-12);
    assert!((embedding_greedy(&["a", "b"], &["a", "b"], &t).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(
        embedding_greedy(&["a", "b"], &["c", "b", "a"], &t),
        embedding_greedy(&["b", "a"], &["a", "c", "b"], &t)
    );
}

#[test]
fn extrema_examples() {
    let v1 = [1.0, 0.0];
    let v2 = [-2.0, 0.0];
    assert_eq!(extrema_vector(&[&v1, &v2], 2), vec![-2.0, 0.0]);
    let t = table(&[("a", &[1.0, 2.0]), ("b", &[3.0, -1.0]), ("c", &[-2.0, 0.5])]);
    let plain = cosine(&[1.0, 2.0], &[3.0, -1.0]).unwrap();
    assert!((embedding_extrema(&["a"], &["b"], &t).unwrap() - plain).abs() < 1e-12);
    assert_eq!(
        embedding_extrema(&["a", "c"], &["b"], &t),
        embedding_extrema(&["a", "c", "c", "a"], &["b"], &t)
    );
}

#[test]
fn distinct_examples() {
    let r = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    assert_eq!(distinct_n(&[r("a b"), r("a c")], 1).unwrap(), 0.75);
    assert_eq!(distinct_n(&[r("a b c d")], 1).unwrap(), 1.0);
    assert_eq!(distinct_n(&[r("a b"), r("a b")], 2).unwrap(), 0.5);
    assert_eq!(distinct_n(&[r("a")], 2).unwrap(), 0.0);
    let many: Vec<_> = (0..100).map(|_| r("x y")).collect();
    assert!(distinct_n(&many, 1).unwrap() <= 0.01);
    assert!(distinct_n(&[r("a")], 0).is_err());
}

#[test]
fn evaluate_identical_and_mismatched() {
    let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.3, 0.7]), ("c", &[-0.2, 0.4])]);
    let lines = vec![vec!["a", "b"], vec!["c"], vec!["b", "c", "a"]];
    let rep = evaluate(&lines, &lines, &t).unwrap();
    for s in [rep.average, rep.extrema, rep.greedy] {
        assert!((s.unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(rep.response_count, 3);
    assert!(evaluate(&lines, &lines[..2], &t).is_err());
    let text = rep.to_string();
    for col in ["Average", "Extrema", "Greedy", "Dist-1", "Dist-2"] {
        assert!(text.contains(col));
    }
    let back: EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn evaluate_counts_excluded_pairs() {
    let t = table(&[("a", &[1.0, 0.0])]);
    let resp = vec![vec!["a"], vec!["zz"]];
    let refs = vec![vec!["a"], vec!["a"]];
    let rep = evaluate(&resp, &refs, &t).unwrap();
    assert_eq!(rep.average, Some(1.0));
    assert_eq!((rep.excluded_average, rep.excluded_extrema, rep.excluded_greedy), (1, 1, 1));
}

#[test]
fn evaluate_files_checks_line_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (r, g) = (dir.path().join("r.txt"), dir.path().join("g.txt"));
    std::fs::write(&r, "a\nb\n").unwrap();
    std::fs::write(&g, "a\n").unwrap();
    let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
    assert!(evaluate_files(&r, &g, &t).is_err());
    std::fs::write(&g, "a\nb\n").unwrap();
    assert_eq!(evaluate_files(&r, &g, &t).unwrap().greedy, Some(1.0));
}

fn arb_fixture() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>)> {
    (1usize..4).prop_flat_map(|d| {
        (
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 5),
            proptest::collection::vec(0usize..5, 1..6),
            proptest::collection::vec(0usize..5, 1..6),
        )
    })
}

fn build(vs: &[Vec<f64>], scale: f64) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(vs[0].len()).unwrap();
    for (i, v) in vs.iter().enumerate() {
        t.insert(format!("w{i}"), v.iter().map(|x| x * scale).collect()).unwrap();
    }
    t
}

fn words(ix: &[usize]) -> Vec<String> {
    ix.iter().map(|i| format!("w{i}")).collect()
}

proptest! {
    #[test]
    fn scores_symmetric_bounded_and_scale_invariant((vs, a, b) in arb_fixture(), scale in 0.01f64..100.0) {
        let t = build(&vs, 1.0);
        let ts = build(&vs, scale);
        let (wa, wb) = (words(&a), words(&b));
        type Metric = fn(&[String], &[String], &EmbeddingTable) -> Option<f64>;
        let metrics: [Metric; 3] = [embedding_average, embedding_extrema, embedding_greedy];
        for m in metrics {
            let s = m(&wa, &wb, &t);
            let r = m(&wb, &wa, &t);
            match (s, r) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "definedness differs under swap"),
            }
            if let Some(x) = s {
                prop_assert!((-1.0..=1.0).contains(&x));
                if let Some(y) = m(&wa, &wb, &ts) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn distinct_bounded_and_duplicate_never_increases(rs in proptest::collection::vec(proptest::collection::vec(0u8..6, 1..6), 1..6), pick in 0usize..6, n in 1usize..3) {
        let rs: Vec<Vec<String>> = rs.iter().map(|r| r.iter().map(|t| t.to_string()).collect()).collect();
        let d = distinct_n(&rs, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let mut more = rs.clone();
        more.push(rs[pick % rs.len()].clone());
        prop_assert!(distinct_n(&more, n).unwrap() <= d + 1e-12);
    }
}
