//! Seeded stand-in for the UCI "Cervical cancer (Risk Factors)" file.
//!
//! Same 36-column header, the same `?` missing-value convention and roughly
//! the same marginals (858 rows, about 6% positive biopsies). Labels come
//! from a noisy logistic risk score over the risk-factor columns. Use the
//! real file whenever it is available; this exists so the pipeline and its
//! tests run without network access.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed;

pub const UCI_HEADER: [&str; 36] = [
    "Age",
    "Number of sexual partners",
    "First sexual intercourse",
    "Num of pregnancies",
    "Smokes",
    "Smokes (years)",
    "Smokes (packs/year)",
    "Hormonal Contraceptives",
    "Hormonal Contraceptives (years)",
    "IUD",
    "IUD (years)",
    "STDs",
    "STDs (number)",
    "STDs:condylomatosis",
    "STDs:cervical condylomatosis",
    "STDs:vaginal condylomatosis",
    "STDs:vulvo-perineal condylomatosis",
    "STDs:syphilis",
    "STDs:pelvic inflammatory disease",
    "STDs:genital herpes",
    "STDs:molluscum contagiosum",
    "STDs:AIDS",
    "STDs:HIV",
    "STDs:Hepatitis B",
    "STDs:HPV",
    "STDs: Number of diagnosis",
    "STDs: Time since first diagnosis",
    "STDs: Time since last diagnosis",
    "Dx:Cancer",
    "Dx:CIN",
    "Dx:HPV",
    "Dx",
    "Hinselmann",
    "Schiller",
    "Citology",
    "Biopsy",
];

/// Row count of the UCI file.
pub const UCI_ROWS: usize = 858;

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.1}"),
        None => "?".to_string(),
    }
}

/// CSV text with `rows` data rows.
pub fn cervical_like_csv(rows: usize, seed_value: u64) -> String {
    let mut rng = seed::rng(seed_value);
    let mut out = UCI_HEADER.join(",");
    out.push('\n');
    for _ in 0..rows {
        let age = normal(&mut rng, 27.0, 8.5).round().clamp(13.0, 84.0);
        let partners = (1.0 + (-rng.gen_range(f64::EPSILON..1.0f64).ln() * 1.3).floor()).min(28.0);
        let first = normal(&mut rng, 17.0, 2.6)
            .round()
            .clamp(10.0, 32.0)
            .min(age);
        let pregnancies = normal(&mut rng, 2.2, 1.4).round().clamp(0.0, 11.0);
        let active = (age - first).max(0.0);

        let smokes = rng.gen_bool(0.145);
        let smoke_years = if smokes {
            (rng.gen::<f64>() * active.min(37.0) * 2.0).round() / 2.0
        } else {
            0.0
        };
        let packs = if smokes {
            (smoke_years * rng.gen_range(0.1..1.5) * 10.0).round() / 10.0
        } else {
            0.0
        };
        let smokes_missing = rng.gen_bool(0.015);

        let hc = rng.gen_bool(0.64);
        let hc_years = if hc {
            (rng.gen::<f64>().powi(2) * active.min(22.0) * 4.0).round() / 4.0
        } else {
            0.0
        };
        let hc_missing = rng.gen_bool(0.126);

        let iud = rng.gen_bool(0.11);
        let iud_years = if iud {
            (rng.gen::<f64>() * active.min(19.0)).round()
        } else {
            0.0
        };
        let iud_missing = rng.gen_bool(0.136);

        let std = rng.gen_bool(0.105);
        let std_count = if std {
            rng.gen_range(1..=4) as f64
        } else {
            0.0
        };
        let std_missing = rng.gen_bool(0.122);
        let mut subtypes = [0.0f64; 12];
        if std {
            for _ in 0..std_count as usize {
                let k = [0, 3, 11, 7, 4, 9][rng.gen_range(0..6)];
                subtypes[k] = 1.0;
            }
        }
        let diagnoses = if std && !std_missing {
            f64::from(u8::from(rng.gen_bool(0.8)))
        } else {
            0.0
        };
        let since_first = (diagnoses > 0.0).then(|| rng.gen_range(1..=22) as f64);
        let since_last = since_first.map(|f| (f - rng.gen_range(0..=3) as f64).max(1.0));

        let score = -3.9
            + 1.1 * f64::from(u8::from(std))
            + 0.06 * smoke_years
            + 0.09 * hc_years
            + 0.035 * (age - 27.0)
            + 0.35 * (partners - 2.0).max(0.0)
            + 0.9 * f64::from(u8::from(iud))
            + 0.12 * pregnancies
            + normal(&mut rng, 0.0, 0.6);
        let biopsy = rng.gen_bool(crate::model::sigmoid(score));

        let dx_cancer = rng.gen_bool(if biopsy { 0.12 } else { 0.015 });
        let dx_cin = rng.gen_bool(if biopsy { 0.05 } else { 0.008 });
        let dx_hpv = dx_cancer && rng.gen_bool(0.9);
        let dx = dx_cancer || dx_cin;
        let hinselmann = rng.gen_bool(if biopsy { 0.45 } else { 0.005 });
        let schiller = rng.gen_bool(if biopsy { 0.8 } else { 0.02 });
        let citology = rng.gen_bool(if biopsy { 0.3 } else { 0.03 });

        let b = |v: bool| Some(f64::from(u8::from(v)));
        let mut fields = vec![
            format!("{age:.0}"),
            cell((!rng.gen_bool(0.03)).then_some(partners)),
            cell((!rng.gen_bool(0.008)).then_some(first)),
            cell((!rng.gen_bool(0.065)).then_some(pregnancies)),
        ];
        for v in [b(smokes), Some(smoke_years), Some(packs)] {
            fields.push(cell(v.filter(|_| !smokes_missing)));
        }
        for v in [b(hc), Some(hc_years)] {
            fields.push(cell(v.filter(|_| !hc_missing)));
        }
        for v in [b(iud), Some(iud_years)] {
            fields.push(cell(v.filter(|_| !iud_missing)));
        }
        fields.push(cell(b(std).filter(|_| !std_missing)));
        fields.push(cell((!std_missing).then_some(std_count)));
        for s in subtypes {
            fields.push(cell((!std_missing).then_some(s)));
        }
        fields.push(format!("{diagnoses:.0}"));
        fields.push(cell(since_first));
        fields.push(cell(since_last));
        for v in [
            dx_cancer, dx_cin, dx_hpv, dx, hinselmann, schiller, citology, biopsy,
        ] {
            fields.push(format!("{}", u8::from(v)));
        }
        debug_assert_eq!(fields.len(), UCI_HEADER.len());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_csv, prepare, CERVICAL_FEATURES, CERVICAL_TARGET};

    #[test]
    fn shape_and_balance() {
        let text = cervical_like_csv(UCI_ROWS, 2019);
        let t = parse_csv(&text, CERVICAL_TARGET, Some(&CERVICAL_FEATURES)).unwrap();
        assert_eq!(t.rows.len(), UCI_ROWS);
        assert_eq!(t.column_names.len(), 16);
        assert!(t.rows.iter().any(|r| r.iter().any(Option::is_none)));
        let ds = prepare(&t).unwrap();
        let pos = ds.labels().iter().filter(|&&l| l == 1).count();
        let rate = pos as f64 / ds.n() as f64;
        assert!((0.03..0.12).contains(&rate), "positive rate {rate}");
        assert_eq!(cervical_like_csv(20, 1), cervical_like_csv(20, 1));
    }
}
