use std::collections::HashSet;

use lsm_ann::bench::{ground_truth, uniform};
use lsm_ann::lsm::Op;
use lsm_ann::{Error, HnswParams, IndexConfig, LsmVecIndex, SearchParams};
use proptest::prelude::*;

fn config(dim: usize, m: usize, m_max: usize) -> IndexConfig {
    let mut c = IndexConfig::new(dim);
    c.hnsw = HnswParams {
        m,
        m_max,
        ef_construction: 64.max(m),
    };
    c
}

#[test]
fn empty_index_search_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let idx = LsmVecIndex::create(tmp.path(), config(4, 4, 8)).unwrap();
    let r = idx.search(&[0.0; 4], &SearchParams::new(3, 10)).unwrap();
    assert!(r.ids.is_empty());
    assert!(r.truncated);
    assert!(idx.check_invariants().unwrap().is_ok());
}

#[test]
fn single_vector_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(3, 4, 8)).unwrap();
    let id = idx.insert(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(idx.entry_point(), Some(id));
    let r = idx.search(&[0.0; 3], &SearchParams::new(5, 10)).unwrap();
    assert_eq!(r.ids, vec![id]);
    assert!(r.truncated);
    assert_eq!(r.dists, vec![14.0f32.sqrt()]);
    idx.delete(id).unwrap();
    assert!(idx.is_empty());
    assert_eq!(idx.entry_point(), None);
    assert!(matches!(idx.delete(id), Err(Error::NotFound(_))));
    let id2 = idx.insert(&[0.0, 0.0, 1.0]).unwrap();
    assert_ne!(id, id2);
    assert_eq!(
        idx.search(&[0.0; 3], &SearchParams::new(1, 1)).unwrap().ids,
        vec![id2]
    );
}

#[test]
fn rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(3, 4, 8)).unwrap();
    assert!(idx.insert(&[1.0, 2.0]).is_err());
    assert!(idx.insert(&[1.0, f32::NAN, 0.0]).is_err());
    idx.insert(&[1.0, 2.0, 3.0]).unwrap();
    assert!(idx.search(&[0.0; 2], &SearchParams::new(1, 1)).is_err());
    assert!(idx.search(&[0.0; 3], &SearchParams::new(0, 1)).is_err());
    assert!(idx.search(&[0.0; 3], &SearchParams::new(5, 2)).is_err());
    assert!(LsmVecIndex::create(tmp.path(), config(3, 4, 8)).is_err());
}

#[test]
fn insert_writes_one_record_per_directed_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(2, 2, 8);
    c.lsm.auto_compact = false;
    let mut idx = LsmVecIndex::create(tmp.path(), c).unwrap();
    let pts = [
        [0.0, 0.0],
        [10.0, 0.0],
        [0.0, 10.0],
        [20.0, 20.0],
        [21.0, 20.0],
    ];
    let ids: Vec<u64> = pts
        .iter()
        .map(|p| idx.insert_with_level(p, 1).unwrap())
        .collect();
    idx.flush().unwrap();
    let before: HashSet<u64> = idx.graph_store().run_infos().iter().map(|r| r.id).collect();
    let n = idx.insert_with_level(&[20.5, 21.0], 1).unwrap();
    idx.flush().unwrap();
    let (v4, v5) = (ids[3], ids[4]);
    assert_eq!(idx.bottom_neighbors(n).unwrap(), vec![v4, v5]);
    let fresh: Vec<_> = idx
        .graph_store()
        .run_infos()
        .into_iter()
        .filter(|r| !before.contains(&r.id))
        .collect();
    assert_eq!(fresh.len(), 1);
    let mut recs: Vec<_> = idx
        .graph_store()
        .run_entries(fresh[0].id)
        .unwrap()
        .iter()
        .map(|e| (e.src, e.dst, e.op))
        .collect();
    recs.sort_unstable();
    let mut want = vec![
        (n, v4, Op::Put),
        (v4, n, Op::Put),
        (n, v5, Op::Put),
        (v5, n, Op::Put),
    ];
    want.sort_unstable();
    assert_eq!(recs, want);
}

#[test]
fn deleting_middle_of_path_reconnects_ends() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(1, 1, 2)).unwrap();
    let a = idx.insert_with_level(&[0.0], 1).unwrap();
    let b = idx.insert_with_level(&[1.0], 1).unwrap();
    let c = idx.insert_with_level(&[2.5], 1).unwrap();
    assert_eq!(idx.bottom_neighbors(b).unwrap(), vec![a, c]);
    idx.delete(b).unwrap();
    assert_eq!(idx.bottom_neighbors(a).unwrap(), vec![c]);
    assert_eq!(idx.bottom_neighbors(c).unwrap(), vec![a]);
    assert!(idx.bottom_neighbors(b).unwrap().is_empty());
    let rep = idx.check_invariants().unwrap();
    assert!(rep.is_ok(), "{rep:?}");
}

#[test]
fn deleting_entry_point_promotes_a_survivor() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(2, 2, 4)).unwrap();
    let top = idx.insert_with_level(&[0.0, 0.0], 4).unwrap();
    let mid = idx.insert_with_level(&[1.0, 0.0], 2).unwrap();
    let far = idx.insert_with_level(&[5.0, 0.0], 2).unwrap();
    idx.insert_with_level(&[0.5, 0.5], 1).unwrap();
    assert_eq!(idx.max_level(), 4);
    idx.delete(top).unwrap();
    assert_eq!(idx.max_level(), 2);
    assert_eq!(idx.entry_point(), Some(mid));
    idx.delete(mid).unwrap();
    assert_eq!(idx.entry_point(), Some(far));
    idx.delete(far).unwrap();
    assert_eq!(idx.max_level(), 1);
    assert!(idx.entry_point().is_some());
    assert!(idx.check_invariants().unwrap().is_ok());
}

#[test]
fn full_pool_search_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(8, 8, 16)).unwrap();
    let pts = uniform(500, 8, 11);
    let corpus: Vec<(u64, Vec<f32>)> = pts
        .iter()
        .map(|p| (idx.insert(p).unwrap(), p.clone()))
        .collect();
    let rep = idx.check_invariants().unwrap();
    assert!(rep.is_ok(), "{rep:?}");
    assert_eq!(rep.unreachable, 0);
    let queries = uniform(20, 8, 12);
    let truth = ground_truth(&queries, &corpus, 10).unwrap();
    for (q, g) in queries.iter().zip(&truth) {
        let r = idx.search(q, &SearchParams::new(10, 500)).unwrap();
        assert_eq!(&r.ids, g);
    }
}

#[test]
fn persisted_index_reopens_with_identical_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = uniform(300, 6, 5);
    let queries = uniform(10, 6, 6);
    let p = SearchParams::new(5, 40);
    let before: Vec<_> = {
        let mut idx = LsmVecIndex::create(tmp.path(), config(6, 6, 12)).unwrap();
        for x in &pts {
            idx.insert(x).unwrap();
        }
        for id in (0..300).step_by(7) {
            idx.delete(id).unwrap();
        }
        idx.persist().unwrap();
        queries
            .iter()
            .map(|q| idx.search(q, &p).unwrap().ids)
            .collect()
    };
    let idx = LsmVecIndex::open(tmp.path()).unwrap();
    assert_eq!(idx.len(), 300 - 43);
    let after: Vec<_> = queries
        .iter()
        .map(|q| idx.search(q, &p).unwrap().ids)
        .collect();
    assert_eq!(before, after);
    assert!(idx.check_invariants().unwrap().is_ok());
}

#[test]
fn reorder_changes_placement_not_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(6, 6, 12)).unwrap();
    for x in uniform(400, 6, 8) {
        idx.insert(&x).unwrap();
    }
    let queries = uniform(30, 6, 9);
    let mut p = SearchParams::new(5, 30);
    p.record_heat = true;
    let before: Vec<_> = queries.iter().map(|q| idx.search(q, &p).unwrap()).collect();
    let rep = idx.reorder_layout().unwrap();
    assert!(rep.objective_after >= rep.objective_before);
    p.record_heat = false;
    for (q, b) in queries.iter().zip(&before) {
        let r = idx.search(q, &p).unwrap();
        assert_eq!(r.ids, b.ids);
        assert_eq!(r.dists, b.dists);
    }
    assert!(idx.check_invariants().unwrap().is_ok());
    idx.persist().unwrap();
    let reopened = LsmVecIndex::open(tmp.path()).unwrap();
    assert_eq!(reopened.search(&queries[0], &p).unwrap().ids, before[0].ids);
}

#[test]
fn concurrent_searches_share_the_index() {
    let tmp = tempfile::tempdir().unwrap();
    let mut idx = LsmVecIndex::create(tmp.path(), config(4, 4, 8)).unwrap();
    for x in uniform(200, 4, 1) {
        idx.insert(&x).unwrap();
    }
    let queries = uniform(16, 4, 2);
    let p = SearchParams::new(3, 20);
    let serial: Vec<_> = queries
        .iter()
        .map(|q| idx.search(q, &p).unwrap().ids)
        .collect();
    let idx = &idx;
    let parallel: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = queries
            .iter()
            .map(|q| s.spawn(move || idx.search(q, &p).unwrap().ids))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn random_updates_keep_invariants(ops in prop::collection::vec((any::<bool>(), any::<u32>()), 1..100), seed in 0u64..1000) {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = config(4, 3, 6);
        c.lsm.memtable_bytes = 25 * 64;
        c.lsm.level1_bytes = 25 * 256;
        c.lsm.run_max_entries = 128;
        let mut idx = LsmVecIndex::create(tmp.path(), c).unwrap();
        let pts = uniform(ops.len(), 4, seed);
        for (i, (ins, pick)) in ops.iter().enumerate() {
            let live = idx.live_ids();
            if *ins || live.is_empty() {
                idx.insert(&pts[i]).unwrap();
            } else {
                idx.delete(live[*pick as usize % live.len()]).unwrap();
            }
            let rep = idx.check_invariants().unwrap();
            prop_assert!(rep.is_ok(), "{:?}", rep);
        }
        if !idx.is_empty() {
            let k = idx.len().min(3);
            let r = idx.search(&pts[0], &SearchParams::new(k, idx.len())).unwrap();
            prop_assert_eq!(r.ids.len(), k);
        }
    }
}
