//! PLCC, SROCC, KROCC and RMSE.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub rmse: f64,
}

fn check_pair(pred: &[f64], y: &[f64]) -> Result<()> {
    if pred.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            pred.len(),
            y.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Dimension("need at least two samples".into()));
    }
    if pred.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok(())
}

fn check_varies(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|&x| x == v[0]) {
        return Err(Error::UndefinedCorrelation(format!("{what} is constant")));
    }
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub fn plcc(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    check_varies(pred, "prediction")?;
    check_varies(y, "label")?;
    Ok(pearson(pred, y))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn srocc(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    check_varies(pred, "prediction")?;
    check_varies(y, "label")?;
    Ok(pearson(&average_ranks(pred), &average_ranks(y)))
}

/// Kendall tau-b, by pair enumeration.
pub fn krocc(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    check_varies(pred, "prediction")?;
    check_varies(y, "label")?;
    let n = pred.len();
    let (mut conc, mut disc, mut tie_p, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            // inputs are finite; partial_cmp also ties -0.0 with 0.0
            let a = pred[i].partial_cmp(&pred[j]).expect("finite") as i64;
            let b = y[i].partial_cmp(&y[j]).expect("finite") as i64;
            match (a, b) {
                (0, 0) => {}
                (0, _) => tie_p += 1,
                (_, 0) => tie_y += 1,
                _ if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n1 = (conc + disc + tie_p) as f64;
    let n2 = (conc + disc + tie_y) as f64;
    Ok(((conc - disc) as f64 / (n1 * n2).sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    let s: f64 = pred.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// All four metrics; `pred` and `y` must already be on the same scale.
pub fn evaluate(pred: &[f64], y: &[f64]) -> Result<MetricReport> {
    Ok(MetricReport {
        plcc: plcc(pred, y)?,
        srocc: srocc(pred, y)?,
        krocc: krocc(pred, y)?,
        rmse: rmse(pred, y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reversal() {
        let y = [0.1, 0.5, 0.2, 0.9, 0.7];
        let r = evaluate(&y, &y).unwrap();
        assert_eq!((r.srocc, r.krocc, r.rmse), (1.0, 1.0, 0.0));
        assert!((r.plcc - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_eq!(srocc(&neg, &y).unwrap(), -1.0);
        assert_eq!(krocc(&neg, &y).unwrap(), -1.0);
        assert!((plcc(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_is_an_error() {
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(
            srocc(&[0.5; 3], &y),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(plcc(&y, &[2.0; 3]).is_err());
        assert!(rmse(&[0.5; 3], &y).is_ok());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn tau_b_with_ties_by_hand() {
        // pairs: (1,2) tie in x; (1,3) c; (2,3) c  -> nc=2, nd=0, tx=1, ty=0
        let t = krocc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / (3.0f64 * 2.0).sqrt()).abs() < 1e-15);
    }
}
