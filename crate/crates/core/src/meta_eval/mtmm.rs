use std::io::Write;

use serde::Serialize;

use super::correlation::kendall_tau;
use super::reliability::cronbach_alpha;
use super::table::ScoreTable;
use crate::{Error, Result};

/// Measure-by-measure matrix: Kendall tau between measures across concepts
/// off the diagonal, Cronbach's alpha across batches on it. `None` marks an
/// undefined entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtmmReport {
    pub run_id: String,
    pub measure_ids: Vec<String>,
    pub n_concepts: usize,
    pub n_batches: usize,
    pub matrix: Vec<Vec<Option<f64>>>,
}

impl MtmmReport {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.measure_ids.iter().position(|m| m == a)?;
        let j = self.measure_ids.iter().position(|m| m == b)?;
        self.matrix[i][j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(std::iter::once("measure").chain(self.measure_ids.iter().map(String::as_str)))?;
        for (id, row) in self.measure_ids.iter().zip(&self.matrix) {
            let cells = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default());
            out.write_record(std::iter::once(id.clone()).chain(cells))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Assembles the MTMM matrix for `measures` from a single-run score table.
///
/// Every (concept, measure, batch) cell over the union of concepts and
/// batches must be present; otherwise the missing cells are reported.
pub fn build_mtmm(table: &ScoreTable, measures: &[String]) -> Result<MtmmReport> {
    if measures.is_empty() {
        return Err(Error::Precondition("no measures given".into()));
    }
    let scoped = ScoreTable::from_rows(table.rows().filter(|r| measures.contains(&r.measure_id)))?;
    let run_id = scoped.single_run()?;
    let concepts: Vec<String> = scoped.concepts().into_iter().collect();
    let batches: Vec<usize> = scoped.batches().into_iter().collect();
    if concepts.len() < 2 {
        return Err(Error::Precondition(format!("MTMM needs at least 2 concepts, got {}", concepts.len())));
    }
    if batches.len() < 2 {
        return Err(Error::Precondition(format!("MTMM needs at least 2 batches, got {}", batches.len())));
    }

    let mut missing = Vec::new();
    for m in measures {
        for c in &concepts {
            for &b in &batches {
                if scoped.get(c, m, b, &run_id).is_none() {
                    missing.push(format!("concept={c} measure={m} batch={b}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }

    let means: Vec<Vec<f64>> =
        measures.iter().map(|m| scoped.batch_means(m, &run_id).into_values().collect()).collect();
    let k = measures.len();
    let mut matrix = vec![vec![None; k]; k];
    for (i, m) in measures.iter().enumerate() {
        let subsets: Vec<Vec<f64>> = batches
            .iter()
            .map(|&b| concepts.iter().map(|c| scoped.get(c, m, b, &run_id).expect("checked complete")).collect())
            .collect();
        matrix[i][i] = match cronbach_alpha(&subsets) {
            Ok(a) => Some(a),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        for j in i + 1..k {
            let tau = kendall_tau(&means[i], &means[j])?;
            matrix[i][j] = Some(tau);
            matrix[j][i] = Some(tau);
        }
    }
    Ok(MtmmReport {
        run_id,
        measure_ids: measures.to_vec(),
        n_concepts: concepts.len(),
        n_batches: batches.len(),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta_eval::table::ScoreRow;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn table(scores: &[(&str, Vec<Vec<f64>>)]) -> ScoreTable {
        // scores[measure] = per batch, per concept
        let mut rows = Vec::new();
        for (m, per_batch) in scores {
            for (b, per_concept) in per_batch.iter().enumerate() {
                for (c, &s) in per_concept.iter().enumerate() {
                    rows.push(ScoreRow { concept_id: format!("c{c:03}"), measure_id: m.to_string(), batch_id: b, run_id: "r".into(), score: s });
                }
            }
        }
        ScoreTable::from_rows(rows).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn duplicated_and_negated_measures() {
        let a = vec![vec![1.0, 3.0, 2.0, 5.0], vec![1.5, 2.5, 2.0, 4.0]];
        let neg: Vec<Vec<f64>> = a.iter().map(|b| b.iter().map(|v| -v).collect()).collect();
        let t = table(&[("A", a.clone()), ("B", a), ("N", neg)]);
        let r = build_mtmm(&t, &ids(&["A", "B", "N"])).unwrap();
        assert_eq!(r.get("A", "B"), Some(1.0));
        assert_eq!(r.get("A", "N"), Some(-1.0));
        assert_eq!(r.get("A", "A"), r.get("B", "B"));
        assert!(r.get("A", "A").unwrap() <= 1.0);
        assert_eq!((r.n_concepts, r.n_batches), (4, 2));
    }

    #[test]
    fn missing_cells_are_listed() {
        let mut t = table(&[("A", vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]])]);
        t.insert(ScoreRow { concept_id: "c000".into(), measure_id: "B".into(), batch_id: 0, run_id: "r".into(), score: 1.0 }).unwrap();
        match build_mtmm(&t, &ids(&["A", "B"])) {
            Err(Error::Incomplete(cells)) => {
                assert_eq!(cells.len(), 5);
                assert!(cells.contains(&"concept=c001 measure=B batch=1".to_string()));
            }
            other => panic!("{other:?}"),
        }
        let single = table(&[("A", vec![vec![1.0, 2.0, 3.0]])]);
        assert!(matches!(build_mtmm(&single, &ids(&["A"])), Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_layout() {
        let a = vec![vec![1.0, 3.0, 2.0], vec![1.0, 3.0, 2.0]];
        let r = build_mtmm(&table(&[("A", a.clone()), ("B", a)]), &ids(&["A", "B"])).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "measure,A,B\nA,1,1\nB,1,1\n");
    }

    #[test]
    fn two_factor_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200;
        let f1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut family = |f: &Vec<f64>| -> Vec<Vec<f64>> {
            (0..2).map(|_| f.iter().map(|v| v + 0.5 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect()).collect()
        };
        let t = table(&[("A1", family(&f1)), ("A2", family(&f1)), ("B1", family(&f2)), ("B2", family(&f2))]);
        let r = build_mtmm(&t, &ids(&["A1", "A2", "B1", "B2"])).unwrap();
        let within = (r.get("A1", "A2").unwrap().abs() + r.get("B1", "B2").unwrap().abs()) / 2.0;
        let cross = ["A1", "A2"]
            .iter()
            .flat_map(|a| ["B1", "B2"].map(|b| r.get(a, b).unwrap().abs()))
            .sum::<f64>()
            / 4.0;
        assert!(within > cross, "{within} vs {cross}");
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_consistent(
            data in proptest::collection::vec(proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 5), 2), 3),
            rot in 0usize..3,
        ) {
            let names = ["X", "Y", "Z"];
            let t = table(&names.iter().zip(&data).map(|(n, d)| (*n, d.clone())).collect::<Vec<_>>());
            let order = ids(&names);
            let mut permuted = order.clone();
            permuted.rotate_left(rot);
            let a = build_mtmm(&t, &order).unwrap();
            let b = build_mtmm(&t, &permuted).unwrap();
            for x in &order {
                for y in &order {
                    prop_assert_eq!(a.get(x, y), a.get(y, x));
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
    }
}
