use std::path::PathBuf;

use clab::io::{
    decode_dump, encode_dump, read_dump, read_report, render_csv, write_dump, write_report,
    EmbeddingDump, ReportFormat, ReportRow,
};
use clab::losses::Variant;
use clab::synth::sample_vmf;
use clab::{Error, Matrix};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn golden_fixture_reads_expected_values() {
    let dump = read_dump(fixture("golden.clab")).unwrap();
    let h = 0.5f64.sqrt();
    let want = [
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.6, 0.8, 0.0, //
        0.5, -0.5, 0.5, -0.5, //
        h, 0.0, 0.0, -h,
    ];
    assert_eq!(dump.embeddings.shape(), (4, 4));
    let got: Vec<u64> = dump
        .embeddings
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let exp: Vec<u64> = want.iter().map(|v| v.to_bits()).collect();
    assert_eq!(got, exp);
    assert_eq!(dump.labels.as_deref(), Some(&[7, 0, u32::MAX, 3][..]));
}

#[test]
fn golden_fixture_reencodes_to_the_same_bytes() {
    let bytes = std::fs::read(fixture("golden.clab")).unwrap();
    assert_eq!(&bytes[..5], b"CLAB1");
    let dump = decode_dump(&bytes).unwrap();
    assert_eq!(encode_dump(&dump), bytes);
}

#[test]
fn random_labeled_batch_round_trips_bitwise() {
    let mu: Vec<f64> = (0..16).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let x = sample_vmf(&mu, 5.0, 100, 11).unwrap();
    let labels: Vec<u32> = (0..100).map(|i| (i * 37 % 10) as u32).collect();
    let dump = EmbeddingDump::new(x, Some(labels)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.clab");
    write_dump(&path, &dump).unwrap();
    let back = read_dump(&path).unwrap();
    let a: Vec<u64> = dump
        .embeddings
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let b: Vec<u64> = back
        .embeddings
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    assert_eq!(a, b);
    assert_eq!(dump.labels, back.labels);
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        22 + 100 * 16 * 8 + 100 * 4
    );
}

#[test]
fn truncated_fixture_reports_offset() {
    let bytes = std::fs::read(fixture("golden.clab")).unwrap();
    match decode_dump(&bytes[..100]) {
        Err(Error::TruncatedPayload {
            offset, available, ..
        }) => {
            assert_eq!(available, 100);
            assert!((22..=100).contains(&offset), "offset {offset}");
        }
        other => panic!("expected TruncatedPayload, got {other:?}"),
    }
    assert!(matches!(
        decode_dump(&bytes[..10]),
        Err(Error::TruncatedPayload { .. })
    ));
}

#[test]
fn malformed_headers_are_typed() {
    let bytes = std::fs::read(fixture("golden.clab")).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_dump(&bad), Err(Error::CorruptHeader(_))));

    let mut bad = bytes.clone();
    bad[4] = b'2';
    assert!(matches!(
        decode_dump(&bad),
        Err(Error::UnsupportedVersion('2'))
    ));

    let mut bad = bytes.clone();
    bad[21] = 7;
    assert!(matches!(decode_dump(&bad), Err(Error::CorruptHeader(_))));

    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(decode_dump(&bad), Err(Error::CorruptHeader(_))));

    assert!(matches!(
        decode_dump(b""),
        Err(Error::TruncatedPayload { .. })
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_dump(dir.path().join("absent.clab")),
        Err(Error::Io { .. })
    ));
}

fn sample_rows() -> Vec<ReportRow> {
    (0..3)
        .map(|k| ReportRow {
            tau: [0.07, 0.2, 1.0][k],
            variant: Variant::Hard,
            alpha: 0.0819,
            step: 100 * k,
            mean_loss: 4.0 / 3.0 + k as f64,
            uniformity: -3.7 - 0.1f64.powi(k as i32 + 1),
            tolerance: 1.0 / 7.0,
            knn_purity: 0.875,
            mean_pos_sim: 0.9 + 1e-17 * k as f64,
            top_neg_sim: (0..10)
                .map(|j| 0.8 - 0.01 * j as f64 + std::f64::consts::PI * 1e-12)
                .collect(),
        })
        .collect()
}

#[test]
fn csv_report_parses_with_an_independent_reader() {
    let rows = sample_rows();
    let text = render_csv(&rows).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let mut want = vec![
        "tau",
        "variant",
        "alpha",
        "step",
        "mean_loss",
        "uniformity",
        "neg_uniformity",
        "tolerance",
        "knn_purity",
        "mean_pos_sim",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    want.extend((1..=10).map(|k| format!("top{k}_neg_sim")));
    assert_eq!(headers, want);

    for (rec, row) in rdr.records().zip(&rows) {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        assert_eq!(f(0).to_bits(), row.tau.to_bits());
        assert_eq!(&rec[1], "hard");
        assert_eq!(rec[3].parse::<usize>().unwrap(), row.step);
        assert_eq!(f(4).to_bits(), row.mean_loss.to_bits());
        assert_eq!(f(6).to_bits(), (-row.uniformity).to_bits());
        assert_eq!(
            rec[6].trim_start_matches('-'),
            rec[5].trim_start_matches('-')
        );
        for j in 0..10 {
            assert_eq!(f(10 + j).to_bits(), row.top_neg_sim[j].to_bits());
        }
        // 17 significant digits, locale-free
        assert!(rec[4].contains('.') && !rec[4].contains(','));
        let mantissa = rec[4].split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17);
    }
}

#[test]
fn json_mirrors_csv_keys_and_values() {
    let rows = sample_rows();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("r.csv");
    let json_path = dir.path().join("r.json");
    write_report(&rows, &csv_path, ReportFormat::Csv).unwrap();
    write_report(&rows, &json_path, ReportFormat::Json).unwrap();
    let from_csv = read_report(&csv_path).unwrap();
    let from_json = read_report(&json_path).unwrap();
    assert_eq!(from_csv, rows);
    assert_eq!(from_json, rows);

    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let first = value.as_array().unwrap()[0].as_object().unwrap();
    let header = std::fs::read_to_string(&csv_path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let mut csv_keys: Vec<&str> = header.split(',').collect();
    let mut json_keys: Vec<&str> = first.keys().map(String::as_str).collect();
    csv_keys.sort_unstable();
    json_keys.sort_unstable();
    assert_eq!(csv_keys, json_keys);
}

#[test]
fn empty_report_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(write_report(&[], dir.path().join("e.csv"), ReportFormat::Csv).is_err());
}

#[test]
fn non_unit_rows_still_load() {
    let m = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
    let bytes = encode_dump(&EmbeddingDump::new(m.clone(), None).unwrap());
    assert_eq!(decode_dump(&bytes).unwrap().embeddings, m);
}
