//! Writes the noiseless three-country indicator fixture and a matching
//! rural-population file.
//!
//! `cargo run --example gen_fixture -- <out dir>`

use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;

use sectoral::fit::linspace;
use sectoral::ingest::{
    IndicatorRow, IndicatorTable, SeriesCodes, AGRICULTURE, GDP_PER_CAPITA, INDUSTRY, RURAL_POPULATION, SERVICES,
};
use sectoral::ModelParams;

const YEARS: std::ops::RangeInclusive<i32> = 1980..=2005;

fn row(code: &str, name: &str, series: &str, values: BTreeMap<i32, Option<f64>>) -> IndicatorRow {
    IndicatorRow {
        country_code: code.into(),
        country_name: name.into(),
        series_code: series.into(),
        series_name: String::new(),
        values,
    }
}

fn main() {
    let out: PathBuf = std::env::args().nth(1).expect("usage: gen_fixture <out dir>").into();
    let countries = [
        ("PAK", "Pakistan", ModelParams::new(0.56, -0.01, 0.32, 8.12), 65.0),
        ("FIN", "Finland", ModelParams::new(2.29, 0.35, 0.50, 8.74), 38.0),
        ("USA", "United States", ModelParams::new(1.76, 0.94, 1.27, 5.02), 19.0),
    ];
    let years: Vec<i32> = YEARS.collect();
    let codes = SeriesCodes::default();
    assert_eq!(codes.all(), [GDP_PER_CAPITA, AGRICULTURE, INDUSTRY, SERVICES]);

    let mut main_table = IndicatorTable {
        years: years.clone(),
        ..Default::default()
    };
    let mut rural = IndicatorTable {
        years: years.clone(),
        ..Default::default()
    };
    for (code, name, p, rural_pct) in countries {
        let grid = linspace(p.g0 + 0.06, p.g0 + 2.26, years.len());
        let column = |f: &dyn Fn(f64) -> f64| -> BTreeMap<i32, Option<f64>> {
            years.iter().zip(&grid).map(|(&y, &g)| (y, Some(f(g)))).collect()
        };
        main_table
            .rows
            .push(row(code, name, GDP_PER_CAPITA, column(&|g| g.exp())));
        main_table
            .rows
            .push(row(code, name, AGRICULTURE, column(&|g| 100.0 * p.share_a(g))));
        main_table
            .rows
            .push(row(code, name, INDUSTRY, column(&|g| 100.0 * p.share_i(g))));
        main_table
            .rows
            .push(row(code, name, SERVICES, column(&|g| 100.0 * p.share_s(g))));
        let mut r: BTreeMap<i32, Option<f64>> = years.iter().map(|&y| (y, None)).collect();
        r.insert(2005, Some(rural_pct));
        rural.rows.push(row(code, name, RURAL_POPULATION, r));
    }
    main_table
        .write_wide(File::create(out.join("three_countries.csv")).unwrap())
        .unwrap();
    rural.write_wide(File::create(out.join("rural.csv")).unwrap()).unwrap();
}
