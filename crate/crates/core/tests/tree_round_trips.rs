use lfcoal::tree::*;
use proptest::prelude::*;

fn all_depth_vectors(height: u64, len: usize) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=height).map(move |h| {
                    let mut w = v.clone();
                    w.push(h);
                    w
                })
            })
            .collect();
    }
    out
}

/// Internal nodes of the multifurcating tree: one per class of equal depths
/// not separated by a deeper one.
fn expected_internal_nodes(depths: &[u64]) -> usize {
    (0..depths.len())
        .filter(|&i| {
            !(0..i).any(|j| depths[j] == depths[i] && depths[j + 1..i].iter().all(|&d| d < depths[i]))
        })
        .count()
}

fn check(seq: &DepthSeq) -> Result<(), TestCaseError> {
    let tree = depths_to_tree(seq);
    prop_assert!(tree.validate().is_ok());
    prop_assert_eq!(&tree_to_depths(&tree).unwrap(), seq);
    prop_assert_eq!(tree.tip_count(), seq.tip_count());
    prop_assert_eq!(tree.internal_count(), expected_internal_nodes(seq.depths()));
    let top = seq.depths().iter().copied().max().unwrap_or(0);
    prop_assert_eq!(tree.node(tree.root()).depth(), top);
    prop_assert_eq!(tree.node(tree.root()).depth() + tree.stem(), seq.height());

    let text = write_newick(&tree);
    let parsed = parse_newick(&text).unwrap();
    prop_assert_eq!(&parsed, &tree);
    prop_assert_eq!(&tree_to_depths(&parsed).unwrap(), seq);
    prop_assert_eq!(write_newick(&parsed), text);

    let mut jsonl = Vec::new();
    write_depth_seqs(&mut jsonl, std::slice::from_ref(seq)).unwrap();
    let back = read_depth_seqs(std::str::from_utf8(&jsonl).unwrap()).unwrap();
    prop_assert_eq!(back, vec![seq.clone()]);
    Ok(())
}

#[test]
fn exhaustive_small_trees() {
    let mut checked = 0;
    for height in 1..=6 {
        for n in 1..=6 {
            for depths in all_depth_vectors(height, n - 1) {
                check(&DepthSeq::new(height, depths).unwrap()).unwrap();
                checked += 1;
            }
        }
    }
    let expected: u32 = (1..=6u32).map(|t| (0..6).map(|j| t.pow(j)).sum::<u32>()).sum();
    assert_eq!(checked, expected);
}

fn random_seq() -> impl Strategy<Value = DepthSeq> {
    (1u64..=40).prop_flat_map(|t| {
        prop::collection::vec(1..=t, 0..60).prop_map(move |d| DepthSeq::new(t, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_trees_round_trip(seq in random_seq()) {
        check(&seq)?;
    }
}

#[test]
fn noisy_newick_is_read_as_integers() {
    let tree = parse_newick("((a:1.0000000001,b:0.9999999999):2,c:3.0)root:1;").unwrap();
    assert_eq!(tree_to_depths(&tree).unwrap(), DepthSeq::new(4, vec![1, 3]).unwrap());
}
