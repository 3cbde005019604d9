//! Chance-corrected agreement. Degenerate cases, where the expected
//! agreement is total, return `None` rather than a conventional number.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Items x raters grid of categorical labels; `None` is a missing label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix<T> {
    rows: Vec<Vec<Option<T>>>,
    raters: usize,
}

impl<T: Ord + Clone> LabelMatrix<T> {
    pub fn new(rows: Vec<Vec<Option<T>>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("label matrix"));
        }
        let raters = rows[0].len();
        if raters < 2 {
            return Err(Error::InvalidConfig("agreement needs at least two raters".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != raters) {
            return Err(Error::Misaligned(format!(
                "item {i} has {} rater columns, expected {raters}",
                rows[i].len()
            )));
        }
        Ok(Self { rows, raters })
    }

    pub fn complete(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::new(rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect())
    }

    pub fn items(&self) -> usize {
        self.rows.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn rows(&self) -> &[Vec<Option<T>>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(Option::is_some))
    }

    pub fn column(&self, rater: usize) -> Vec<Option<T>> {
        self.rows.iter().map(|r| r[rater].clone()).collect()
    }

    /// Applies `f` to every present label.
    pub fn map<U: Ord + Clone>(&self, f: impl Fn(&T) -> U) -> LabelMatrix<U> {
        LabelMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|x| x.as_ref().map(&f)).collect())
                .collect(),
            raters: self.raters,
        }
    }
}

fn counts<'a, T: Ord + 'a>(labels: impl IntoIterator<Item = &'a T>) -> BTreeMap<&'a T, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Fleiss' kappa; requires every item to carry all raters' labels.
pub fn fleiss_kappa<T: Ord + Clone>(labels: &LabelMatrix<T>) -> Result<Option<f64>> {
    if !labels.is_complete() {
        return Err(Error::Misaligned("Fleiss' kappa needs a label from every rater on every item".into()));
    }
    let n = labels.raters() as f64;
    let items = labels.items() as f64;
    let mut totals: BTreeMap<&T, usize> = BTreeMap::new();
    let mut p_bar = 0.0;
    for row in labels.rows() {
        let c = counts(row.iter().flatten());
        let sq: usize = c.values().map(|&k| k * k).sum();
        p_bar += (sq as f64 - n) / (n * (n - 1.0));
        for (k, v) in c {
            *totals.entry(k).or_insert(0) += v;
        }
    }
    p_bar /= items;
    let p_e: f64 = totals
        .values()
        .map(|&t| {
            let p = t as f64 / (items * n);
            p * p
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

/// Krippendorff's alpha with the nominal distance, via the coincidence
/// matrix. Items with fewer than two labels do not contribute.
pub fn krippendorff_alpha_nominal<T: Ord + Clone>(labels: &LabelMatrix<T>) -> Result<Option<f64>> {
    let mut n_c: BTreeMap<&T, f64> = BTreeMap::new();
    let mut observed = 0.0;
    let mut pairable = 0usize;
    for row in labels.rows() {
        let m_u = row.iter().flatten().count();
        if m_u < 2 {
            continue;
        }
        pairable += 1;
        let c = counts(row.iter().flatten());
        let sq: usize = c.values().map(|&k| k * k).sum();
        // off-diagonal mass of this unit's coincidences
        observed += (m_u * m_u - sq) as f64 / (m_u - 1) as f64;
        for (k, v) in c {
            *n_c.entry(k).or_insert(0.0) += v as f64;
        }
    }
    if pairable == 0 {
        return Err(Error::Empty("set of items with at least two labels"));
    }
    let n: f64 = n_c.values().sum();
    let sq: f64 = n_c.values().map(|v| v * v).sum();
    let expected = (n * n - sq) / (n * (n - 1.0));
    if expected == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - (observed / n) / expected))
}

/// Cohen's kappa between two raters over the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("label vectors of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("label vector"));
    }
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let ca = counts(a);
    let cb = counts(b);
    let p_e: f64 = ca
        .iter()
        .map(|(k, &v)| v as f64 * cb.get(k).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Ok(None);
    }
    Ok(Some((p_o - p_e) / (1.0 - p_e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    /// Cohen's kappa on the binary decision; `None` on the diagonal and for
    /// undefined pairs.
    pub kappa: Vec<Vec<Option<f64>>>,
    pub mean_kappa: Option<f64>,
    pub min_kappa: Option<f64>,
    pub max_kappa: Option<f64>,
    pub undefined_pairs: usize,
    /// Items where every present rater gives the same binary decision.
    pub unanimous_rate: f64,
    /// Per-pair share of co-rated items with the same binary decision.
    pub binary_rate: Vec<Vec<f64>>,
    /// Per-pair share of co-rated items with the identical full label.
    pub signature_rate: Vec<Vec<f64>>,
}

/// Pairwise statistics over full labels (signatures) reduced to a binary
/// decision by `decision`.
pub fn pairwise_agreement<T: Ord + Clone>(
    labels: &LabelMatrix<T>,
    decision: impl Fn(&T) -> bool,
) -> Result<PairwiseAgreement> {
    let r = labels.raters();
    let mut kappa = vec![vec![None; r]; r];
    let mut binary_rate = vec![vec![1.0; r]; r];
    let mut signature_rate = vec![vec![1.0; r]; r];
    let mut defined = Vec::new();
    let mut undefined_pairs = 0;
    for i in 0..r {
        for j in i + 1..r {
            let common: Vec<(&T, &T)> = labels
                .rows()
                .iter()
                .filter_map(|row| Some((row[i].as_ref()?, row[j].as_ref()?)))
                .collect();
            if common.is_empty() {
                return Err(Error::Misaligned(format!("raters {i} and {j} share no items")));
            }
            let a: Vec<bool> = common.iter().map(|(x, _)| decision(x)).collect();
            let b: Vec<bool> = common.iter().map(|(_, y)| decision(y)).collect();
            let k = cohen_kappa(&a, &b)?;
            kappa[i][j] = k;
            kappa[j][i] = k;
            match k {
                Some(v) => defined.push(v),
                None => undefined_pairs += 1,
            }
            let len = common.len() as f64;
            let br = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / len;
            let sr = common.iter().filter(|(x, y)| x == y).count() as f64 / len;
            binary_rate[i][j] = br;
            binary_rate[j][i] = br;
            signature_rate[i][j] = sr;
            signature_rate[j][i] = sr;
        }
    }
    let decided: Vec<BTreeSet<bool>> = labels
        .rows()
        .iter()
        .filter(|row| row.iter().flatten().count() >= 2)
        .map(|row| row.iter().flatten().map(&decision).collect())
        .collect();
    let unanimous_rate = if decided.is_empty() {
        0.0
    } else {
        decided.iter().filter(|s| s.len() == 1).count() as f64 / decided.len() as f64
    };
    let mean_kappa = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(PairwiseAgreement {
        kappa,
        mean_kappa,
        min_kappa: defined.iter().copied().reduce(f64::min),
        max_kappa: defined.iter().copied().reduce(f64::max),
        undefined_pairs,
        unanimous_rate,
        binary_rate,
        signature_rate,
    })
}

/// Summary of a multi-rater study on the binary decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub raters: usize,
    /// `None` when undefined or when some rater skipped an item.
    pub fleiss_kappa: Option<f64>,
    pub krippendorff_alpha: Option<f64>,
    #[serde(flatten)]
    pub pairwise: PairwiseAgreement,
}

pub fn agreement_report<T: Ord + Clone>(
    labels: &LabelMatrix<T>,
    decision: impl Fn(&T) -> bool + Copy,
) -> Result<AgreementReport> {
    let binary = labels.map(decision);
    let fleiss_kappa = if binary.is_complete() {
        fleiss_kappa(&binary)?
    } else {
        None
    };
    Ok(AgreementReport {
        items: labels.items(),
        raters: labels.raters(),
        fleiss_kappa,
        krippendorff_alpha: krippendorff_alpha_nominal(&binary)?,
        pairwise: pairwise_agreement(labels, decision)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // textbook pairable-values formula, enumerating ordered pairs explicitly
    fn alpha_oracle(rows: &[Vec<Option<char>>]) -> Option<f64> {
        let units: Vec<Vec<char>> = rows
            .iter()
            .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
            .filter(|u| u.len() >= 2)
            .collect();
        let all: Vec<char> = units.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mut d_o = 0.0;
        for u in &units {
            let mut pairs = 0.0;
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if i != j && u[i] != u[j] {
                        pairs += 1.0;
                    }
                }
            }
            d_o += pairs / (u.len() as f64 - 1.0);
        }
        d_o /= n;
        let mut d_e = 0.0;
        for i in 0..all.len() {
            for j in 0..all.len() {
                if i != j && all[i] != all[j] {
                    d_e += 1.0;
                }
            }
        }
        d_e /= n * (n - 1.0);
        (d_e > 0.0).then(|| 1.0 - d_o / d_e)
    }

    fn worked() -> LabelMatrix<char> {
        LabelMatrix::complete(vec![vec!['V', 'V', 'I'], vec!['V', 'I', 'I']]).unwrap()
    }

    #[test]
    fn fleiss_worked_case() {
        let k = fleiss_kappa(&worked()).unwrap().unwrap();
        assert!((k + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_matches_oracle() {
        let m = worked();
        let a = krippendorff_alpha_nominal(&m).unwrap().unwrap();
        assert!((a - alpha_oracle(m.rows()).unwrap()).abs() < 1e-12);
        let rows = vec![
            vec![Some('a'), Some('a'), None, Some('b')],
            vec![Some('b'), None, None, None],
            vec![Some('c'), Some('c'), Some('c'), Some('a')],
            vec![None, Some('b'), Some('b'), Some('b')],
        ];
        let m = LabelMatrix::new(rows.clone()).unwrap();
        let a = krippendorff_alpha_nominal(&m).unwrap().unwrap();
        assert!((a - alpha_oracle(&rows).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let same = LabelMatrix::complete(vec![vec![1, 1, 1], vec![1, 1, 1]]).unwrap();
        assert_eq!(fleiss_kappa(&same).unwrap(), None);
        assert_eq!(krippendorff_alpha_nominal(&same).unwrap(), None);
        assert_eq!(cohen_kappa(&[2, 2, 2], &[2, 2, 2]).unwrap(), None);
        assert!(cohen_kappa(&[1, 2], &[1]).is_err());
        let sparse = LabelMatrix::new(vec![vec![Some(1), None], vec![None, Some(2)]]).unwrap();
        assert!(krippendorff_alpha_nominal(&sparse).is_err());
        assert!(fleiss_kappa(&sparse).is_err());
        assert!(LabelMatrix::complete(vec![vec![1]]).is_err());
    }

    #[test]
    fn perfect_agreement() {
        let m = LabelMatrix::complete(vec![vec!['x'; 4], vec!['y'; 4], vec!['x'; 4]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), Some(1.0));
        assert_eq!(krippendorff_alpha_nominal(&m).unwrap(), Some(1.0));
        assert_eq!(cohen_kappa(&m.column(0), &m.column(3)).unwrap(), Some(1.0));
        let p = pairwise_agreement(&m, |c| *c == 'x').unwrap();
        assert_eq!(p.mean_kappa, Some(1.0));
        assert_eq!(p.unanimous_rate, 1.0);
    }

    #[test]
    fn signature_agreement_never_exceeds_binary() {
        // labels are issue sets; empty means valid
        let s = |v: &[u8]| v.iter().copied().collect::<BTreeSet<u8>>();
        let m = LabelMatrix::complete(vec![
            vec![s(&[]), s(&[]), s(&[1])],
            vec![s(&[1]), s(&[2]), s(&[1, 2])],
            vec![s(&[2]), s(&[2]), s(&[])],
            vec![s(&[]), s(&[1]), s(&[1])],
        ])
        .unwrap();
        let p = pairwise_agreement(&m, |x| x.is_empty()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(p.signature_rate[i][j] <= p.binary_rate[i][j]);
            }
        }
        assert_eq!(p.unanimous_rate, 0.25);
        let report = agreement_report(&m, |x: &BTreeSet<u8>| x.is_empty()).unwrap();
        assert_eq!(report.raters, 3);
        assert!(report.fleiss_kappa.is_some());
    }
}
