//! Post-fit analyses: collapse coordinates and the agriculture/rural
//! population correlation.

use std::collections::BTreeMap;

use crate::fit::CountrySeries;
use crate::ingest::{CollapsePoint, ResultRecord};
use crate::numerics::{pearson, quartile_stats, NumericsError, QuartileStats};

/// Collapse coordinates for every observation of `series` under the fitted
/// parameters in `record`.
///
/// Years with zero agrarian share have no collapse coordinates and are
/// skipped. Display columns are empty when the parameters are unclassifiable
/// or a type-3 point falls outside the log domain.
pub fn collapse_country(series: &CountrySeries, record: &ResultRecord) -> Vec<CollapsePoint> {
    let params = record.params();
    let ty = params.classify().ok().map(|t| t.id());
    series
        .observations
        .iter()
        .filter_map(|o| {
            let (x, y) = params.collapse_transform(o.shares.a, o.shares.i).ok()?;
            let display = params.collapse_display(x, y).ok();
            Some(CollapsePoint {
                code: series.code.clone(),
                year: o.year,
                transfer_type: ty,
                x,
                y,
                x_display: display.map(|d| d.0),
                y_display: display.map(|d| d.1),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuralCorrelation {
    /// Countries entering the sample, ascending.
    pub codes: Vec<String>,
    /// Pearson r of ln a against the rural population fraction.
    pub r: f64,
    /// Keyed by GDP per capita; `u` is ln a and `v` the rural fraction.
    /// `None` below four countries.
    pub quartiles: Option<QuartileStats>,
}

/// Correlates observed ln a with the rural population fraction in `year`.
///
/// A country enters when it has an observation in `year` with a > 0 and a
/// rural value for that year.
pub fn correlate_rural(
    series: &[CountrySeries],
    rural: &BTreeMap<String, Option<f64>>,
    year: i32,
) -> Result<RuralCorrelation, NumericsError> {
    let mut sorted: Vec<&CountrySeries> = series.iter().collect();
    sorted.sort_by(|l, r| l.code.cmp(&r.code));
    let mut codes = Vec::new();
    let (mut gdp, mut ln_a, mut frac) = (Vec::new(), Vec::new(), Vec::new());
    for s in sorted {
        let Some(obs) = s.observations.iter().find(|o| o.year == year) else {
            continue;
        };
        let Some(Some(r)) = rural.get(&s.code) else {
            continue;
        };
        if !(obs.shares.a > 0.0) {
            continue;
        }
        codes.push(s.code.clone());
        gdp.push(obs.g.exp());
        ln_a.push(obs.shares.a.ln());
        frac.push(*r);
    }
    let r = pearson(&ln_a, &frac)?;
    let paired: Vec<(f64, f64)> = ln_a.iter().copied().zip(frac.iter().copied()).collect();
    let quartiles = quartile_stats(&gdp, &paired).ok();
    Ok(RuralCorrelation { codes, r, quartiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Observation;
    use crate::model::{ModelParams, SectorShares};

    fn record(code: &str, p: ModelParams) -> ResultRecord {
        ResultRecord {
            code: code.into(),
            k1: p.k1,
            k2: p.k2,
            alpha: p.alpha,
            g0: p.g0,
            mse_a: 0.0,
            mse_i: 0.0,
            mse_s: 0.0,
            mse_sum: 0.0,
            accepted: true,
            transfer_type: p.classify().ok().map(|t| t.id()),
            g_max_i: p.g_max_industry(),
            n_obs: 0,
        }
    }

    fn exact_series(code: &str, p: ModelParams, gs: &[f64]) -> CountrySeries {
        CountrySeries {
            code: code.into(),
            name: code.into(),
            observations: gs
                .iter()
                .enumerate()
                .map(|(k, &g)| Observation {
                    year: 1980 + k as i32,
                    g,
                    shares: p.shares(g),
                })
                .collect(),
        }
    }

    #[test]
    fn exact_points_lie_on_diagonal() {
        let pak = ModelParams::new(0.56, -0.01, 0.32, 5.35);
        let fin = ModelParams::new(2.29, 0.35, 0.50, 8.74);
        for (code, p) in [("PAK", pak), ("FIN", fin)] {
            let gs: Vec<f64> = (0..10).map(|k| p.g0 + 0.1 + 0.2 * k as f64).collect();
            let pts = collapse_country(&exact_series(code, p, &gs), &record(code, p));
            assert_eq!(pts.len(), 10);
            for pt in &pts {
                assert!((pt.y - pt.x).abs() < 1e-12, "{pt:?}");
                if code == "PAK" {
                    assert_eq!(pt.transfer_type, Some(3));
                    assert!((pt.x_display.unwrap() - (-pt.x).ln()).abs() < 1e-15);
                } else {
                    assert_eq!((pt.x_display, pt.y_display), (Some(pt.x), Some(pt.y)));
                }
            }
        }
    }

    #[test]
    fn zero_agriculture_years_are_skipped() {
        let p = ModelParams::new(2.29, 0.35, 0.50, 8.74);
        let mut s = exact_series("FIN", p, &[9.0, 9.5]);
        s.observations[0].shares = SectorShares::new(0.0, 0.3, 0.7);
        let pts = collapse_country(&s, &record("FIN", p));
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].year, 1981);
    }

    fn one_year(code: &str, gdp: f64, a: f64) -> CountrySeries {
        CountrySeries {
            code: code.into(),
            name: code.into(),
            observations: vec![Observation {
                year: 2005,
                g: gdp.ln(),
                shares: SectorShares::new(a, 0.3, 0.7 - a),
            }],
        }
    }

    #[test]
    fn exact_linear_relation() {
        let series: Vec<CountrySeries> = (0..8)
            .map(|k| one_year(&format!("C{k}"), 1000.0 * (k + 1) as f64, 0.02 * (k + 1) as f64))
            .collect();
        let rural: BTreeMap<String, Option<f64>> = series
            .iter()
            .map(|s| (s.code.clone(), Some(0.1 + 0.05 * s.observations[0].shares.a.ln())))
            .collect();
        let c = correlate_rural(&series, &rural, 2005).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        let q = c.quartiles.unwrap();
        assert_eq!(q.groups.map(|g| g.count), [2, 2, 2, 2]);
    }

    #[test]
    fn too_few_countries() {
        let series = vec![one_year("AAA", 1000.0, 0.1), one_year("BBB", 2000.0, 0.05)];
        let rural = BTreeMap::from([("AAA".to_string(), Some(0.5)), ("BBB".to_string(), None)]);
        assert!(matches!(
            correlate_rural(&series, &rural, 2005),
            Err(NumericsError::TooFewSamples { .. })
        ));
        let rural = BTreeMap::from([("AAA".to_string(), Some(0.5)), ("BBB".to_string(), Some(0.3))]);
        let c = correlate_rural(&series, &rural, 2005).unwrap();
        assert!(c.quartiles.is_none());
        assert_eq!(c.codes, vec!["AAA", "BBB"]);
    }
}
