//! Brute-force reference computations shared by the oracle tests and the
//! acceptance run. Each returns the number of cases checked or the first
//! disagreement.

use std::collections::{BTreeMap, BTreeSet};

use jrrelp_core::corpus::{build_answer_sets, build_vocab, prune_dependency_tree, Dataset, Sentence, Split};
use jrrelp_core::metrics::{macro_prf, micro_prf};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sentence;

const TYPES: [&str; 5] = ["PERSON", "ORGANIZATION", "CITY", "COUNTRY", "DATE"];
const RELATIONS: [&str; 7] = ["NoRelation", "r:a", "r:b", "r:c", "r:d", "r:e", "r:f"];

/// Three-token sentence with random argument types and relation; both
/// arguments attach to the middle token.
pub fn random_typed(rng: &mut impl Rng) -> Sentence {
    sentence(
        "s v o",
        (0, 0),
        (2, 2),
        (TYPES.choose(rng).unwrap(), TYPES.choose(rng).unwrap()),
        &[2, 0, 2],
        RELATIONS.choose(rng).unwrap(),
    )
}

/// Answer sets against a scan of every triple, with and without NoRelation.
pub fn answer_sets(sentences: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Sentence> = (0..sentences).map(|_| random_typed(&mut rng)).collect();
    let data = Dataset::new(raw, Split::Train).map_err(|e| e.to_string())?.type_substituted();
    let vocab = build_vocab(&data, 1);
    for include_negative in [true, false] {
        let got = build_answer_sets(&data, &vocab, include_negative).map_err(|e| e.to_string())?;

        let mut expect: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        let mut domain = BTreeSet::new();
        for s in &data.sentences {
            domain.insert(format!("OBJ-{}", s.obj_type));
            if s.relation == "NoRelation" && !include_negative {
                continue;
            }
            expect
                .entry((format!("SUBJ-{}", s.subj_type), s.relation.clone()))
                .or_default()
                .insert(format!("OBJ-{}", s.obj_type));
        }

        let mut want_domain: Vec<usize> = domain.iter().map(|t| vocab.token_id(t)).collect();
        want_domain.sort_unstable();
        if got.candidate_domain() != want_domain.as_slice() {
            return Err(format!("candidate domain {:?} != {:?}", got.candidate_domain(), want_domain));
        }
        if got.len() != expect.len() {
            return Err(format!("{} keys, scan found {}", got.len(), expect.len()));
        }
        for ((subj, rel), objs) in &expect {
            let key = (vocab.token_id(subj), vocab.relation_id(rel).map_err(|e| e.to_string())?);
            let want: BTreeSet<usize> = objs.iter().map(|o| vocab.token_id(o)).collect();
            match got.get(key.0, key.1) {
                Some(set) if *set == want => {}
                other => return Err(format!("({subj}, {rel}): {other:?} != {want:?}")),
            }
        }
    }
    Ok(sentences)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro and macro scores against sums over an explicit confusion matrix.
pub fn f1_scores(vectors: usize, seed: u64) -> Result<usize, String> {
    const CLASSES: usize = 6;
    const NR: usize = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..vectors {
        let n = rng.gen_range(1..80);
        let draw = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.4) { NR } else { rng.gen_range(0..CLASSES) };
        let golds: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let preds: Vec<usize> = golds
            .iter()
            .map(|&g| if rng.gen_bool(0.5) { g } else { draw(&mut rng) })
            .collect();

        let mut confusion = [[0usize; CLASSES]; CLASSES];
        for (&g, &p) in golds.iter().zip(&preds) {
            confusion[g][p] += 1;
        }
        let row = |c: usize| confusion[c].iter().sum::<usize>();
        let col = |c: usize| (0..CLASSES).map(|g| confusion[g][c]).sum::<usize>();

        let tp: usize = (1..CLASSES).map(|c| confusion[c][c]).sum();
        let predicted: usize = (1..CLASSES).map(col).sum();
        let gold: usize = (1..CLASSES).map(row).sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, gold));
        let micro = micro_prf(&preds, &golds, NR).map_err(|e| e.to_string())?;
        let want = [p, r, harmonic(p, r)];
        let got = [micro.precision, micro.recall, micro.f1];
        if got.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!("trial {trial}: micro {got:?} != {want:?}"));
        }

        let present: Vec<usize> = (1..CLASSES).filter(|&c| row(c) + col(c) > 0).collect();
        let k = present.len().max(1) as f64;
        let per: Vec<(f64, f64, f64)> = present
            .iter()
            .map(|&c| {
                let (p, r) = (ratio(confusion[c][c], col(c)), ratio(confusion[c][c], row(c)));
                (p, r, harmonic(p, r))
            })
            .collect();
        let want = [
            per.iter().map(|x| x.0).sum::<f64>() / k,
            per.iter().map(|x| x.1).sum::<f64>() / k,
            per.iter().map(|x| x.2).sum::<f64>() / k,
        ];
        let macro_ = macro_prf(&preds, &golds, NR).map_err(|e| e.to_string())?;
        let got = [macro_.precision, macro_.recall, macro_.f1];
        if got.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!("trial {trial}: macro {got:?} != {want:?}"));
        }
    }
    Ok(vectors)
}

/// Random rooted tree on `n` nodes as 1-based heads (0 marks the root).
pub fn random_heads(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for i in 1..n {
        let p = order[rng.gen_range(0..i)];
        heads[order[i]] = p + 1;
    }
    heads
}

/// Random sentence over a random tree with disjoint subject and object spans.
pub fn random_tree_sentence(rng: &mut impl Rng, max_nodes: usize) -> Sentence {
    let n = rng.gen_range(2..=max_nodes);
    let heads = random_heads(n, rng);
    let cut = rng.gen_range(1..n);
    let s0 = rng.gen_range(0..cut);
    let s1 = rng.gen_range(s0..cut);
    let o0 = rng.gen_range(cut..n);
    let o1 = rng.gen_range(o0..n);
    let (subj, obj) = if rng.gen_bool(0.5) { ((s0, s1), (o0, o1)) } else { ((o0, o1), (s0, s1)) };
    let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    sentence(&tokens.join(" "), subj, obj, ("PERSON", "CITY"), &heads, "r:a")
}

/// Pruning against all-pairs distances and ancestor-set intersection.
pub fn pruning(trees: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trees {
        let s = random_tree_sentence(&mut rng, 12);
        let n = s.len();
        let heads = &s.heads;

        const FAR: usize = usize::MAX / 4;
        let mut d = vec![vec![FAR; n]; n];
        for i in 0..n {
            d[i][i] = 0;
            if heads[i] > 0 {
                d[i][heads[i] - 1] = 1;
                d[heads[i] - 1][i] = 1;
            }
        }
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][m] + d[m][j] < d[i][j] {
                        d[i][j] = d[i][m] + d[m][j];
                    }
                }
            }
        }
        let root = heads.iter().position(|&h| h == 0).unwrap();
        let ancestors = |i: usize| -> BTreeSet<usize> { (0..n).filter(|&a| d[i][a] + d[a][root] == d[i][root]).collect() };

        let targets: Vec<usize> = s.subj.indices().chain(s.obj.indices()).collect();
        let common = targets
            .iter()
            .map(|&t| ancestors(t))
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap();
        let lca = *common.iter().max_by_key(|&&a| d[a][root]).unwrap();
        let path: BTreeSet<usize> = (0..n)
            .filter(|&x| targets.iter().any(|&t| d[t][x] + d[x][lca] == d[t][lca]))
            .collect();

        for k in [0, 1, 2, 3, n] {
            let kept: Vec<bool> = (0..n).map(|x| path.iter().any(|&p| d[x][p] <= k)).collect();
            let got = prune_dependency_tree(&s, k).map_err(|e| e.to_string())?;
            for i in 0..n {
                if got.is_kept(i) != kept[i] {
                    return Err(format!("tree {trial} heads {heads:?} k={k}: token {i} kept={}", got.is_kept(i)));
                }
                for j in 0..n {
                    let want = kept[i] && kept[j] && (i == j || d[i][j] == 1);
                    if got.adjacent(i, j) != want {
                        return Err(format!("tree {trial} heads {heads:?} k={k}: edge ({i}, {j})"));
                    }
                }
            }
        }
    }
    Ok(trees)
}
