mod common;

use std::fs;
use std::process::Command;

use common::{random_frame, rng};
use tdvc::cp::{cp_als, AlsConfig};
use tdvc::frame::Frame;
use tdvc::metrics::{curves_by_key, read_rows, write_rows};
use tdvc::pipeline::{
    build_group_tensor, decode_sequence, encode_sequence, ingest, rd_sweep, write_pgm,
    write_sequence, DepthSequence, EncodeConfig, SweepOptions, SweepSpec,
};
use tdvc::{synth, Error};

fn constant_sequence(frames: usize, value: u16) -> DepthSequence {
    let frames = (0..frames)
        .map(|_| Frame::new(20, 12, 16, vec![value; 240]).unwrap())
        .collect();
    DepthSequence::new(frames, 15.0).unwrap()
}

#[test]
fn ingests_sorted_16_bit_pgms() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = rng(61);
    let frames: Vec<Frame> = (0..3).map(|_| random_frame(&mut g, 64, 48, 16)).collect();
    // Written out of order: ingestion must sort by name.
    for (i, name) in [(2, "c.pgm"), (0, "a.pgm"), (1, "b.pgm")] {
        write_pgm(&frames[i], &dir.path().join(name)).unwrap();
    }
    let seq = ingest(&[dir.path().to_path_buf()], 15.0).unwrap();
    assert_eq!(seq.frames(), frames.as_slice());
    assert_eq!(seq.bit_depth(), 16);
}

#[test]
fn a_color_pgm_in_the_set_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = rng(62);
    write_pgm(&random_frame(&mut g, 8, 8, 8), &dir.path().join("a.pgm")).unwrap();
    fs::write(dir.path().join("b.pgm"), b"P6\n1 1\n255\n\x01\x02\x03").unwrap();
    let err = ingest(&[dir.path().to_path_buf()], 15.0).unwrap_err();
    assert!(matches!(err, Error::UnsupportedFormat { .. }));
    assert!(err.to_string().contains("b.pgm"));
}

#[test]
fn mixed_dimensions_are_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = rng(63);
    write_pgm(&random_frame(&mut g, 8, 8, 8), &dir.path().join("a.pgm")).unwrap();
    write_pgm(&random_frame(&mut g, 9, 8, 8), &dir.path().join("b.pgm")).unwrap();
    assert!(matches!(
        ingest(&[dir.path().to_path_buf()], 15.0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn constant_frames_form_a_rank_one_tensor() {
    let seq = constant_sequence(8, 23456);
    let t = build_group_tensor(&seq, 0, 8).unwrap();
    let (_, report) = cp_als(&t, &AlsConfig::new(1)).unwrap();
    assert!(report.final_fit_error < 1e-10);
}

#[test]
fn single_frame_group_equals_the_normalized_frame() {
    let mut g = rng(64);
    let f = random_frame(&mut g, 7, 5, 8);
    let seq = DepthSequence::new(vec![f.clone()], 15.0).unwrap();
    let t = build_group_tensor(&seq, 0, 8).unwrap();
    assert_eq!(t.shape(), &[5, 7, 1]);
    for y in 0..5 {
        for x in 0..7 {
            assert_eq!(t.get(&[y, x, 0]), f64::from(f.get(x, y)) / 255.0);
        }
    }
}

#[test]
fn constant_sequence_survives_within_one_lsb() {
    let seq = constant_sequence(16, 51234);
    let bytes = encode_sequence(&seq, &EncodeConfig::new(1, 4)).unwrap();
    let back = decode_sequence(&bytes, None, 15.0).unwrap();
    assert_eq!((back.width(), back.height()), (20, 12));
    for (a, b) in seq.frames().iter().zip(back.frames()) {
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((i32::from(*x) - i32::from(*y)).abs() <= 1);
        }
    }
}

#[test]
fn bytes_fall_with_qp_and_grow_with_rank() {
    let seq = synth::corpus_item(2).unwrap();
    let size = |rank, qp| {
        encode_sequence(&seq, &EncodeConfig::new(rank, qp))
            .unwrap()
            .len()
    };
    assert!(size(5, 38) < size(5, 2));
    assert!(size(20, 14) > size(1, 14));
}

#[test]
fn truncated_container_is_a_bitstream_error() {
    let seq = synth::corpus_item(0).unwrap();
    let bytes = encode_sequence(&seq, &EncodeConfig::new(2, 20)).unwrap();
    for cut in [0, 10, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_sequence(&bytes[..cut], None, 15.0).is_err());
    }
}

#[test]
fn default_sweep_has_35_rows_and_usable_curves() {
    let mut g = rng(65);
    let frames = (0..8).map(|_| random_frame(&mut g, 16, 16, 8)).collect();
    let seq = DepthSequence::new(frames, 15.0).unwrap();
    let result = rd_sweep(&seq, &SweepSpec::default(), &SweepOptions::default()).unwrap();
    assert_eq!(result.rows.len(), 35);
    assert!(result.rows.iter().all(|r| r.bytes.is_some()));
    let mut buf = Vec::new();
    write_rows(&result.rows, &mut buf).unwrap();
    let curves = curves_by_key(&read_rows(buf.as_slice()).unwrap());
    assert_eq!(curves.len(), 5);
    for curve in curves.values() {
        assert_eq!(curve.as_ref().unwrap().points().len(), 7);
    }
}

#[test]
fn cli_round_trip_and_error_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tdvc");
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    write_sequence(&synth::corpus_item(1).unwrap(), &frames).unwrap();
    let container = dir.path().join("out.tdvc");
    let status = Command::new(exe)
        .args(["encode", "--rank", "4", "--qp", "20", "-i"])
        .arg(&frames)
        .arg("-o")
        .arg(&container)
        .status()
        .unwrap();
    assert!(status.success());
    let decoded = dir.path().join("decoded");
    let status = Command::new(exe)
        .arg("decode")
        .arg("-i")
        .arg(&container)
        .arg("-o")
        .arg(&decoded)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(exe)
        .arg("metrics")
        .arg("--ref")
        .arg(&frames)
        .arg("--test")
        .arg(&decoded)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("mean,"));

    let bytes = fs::read(&container).unwrap();
    fs::write(&container, &bytes[..bytes.len() - 3]).unwrap();
    let out = Command::new(exe)
        .arg("decode")
        .arg("-i")
        .arg(&container)
        .arg("-o")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bitstream"));
}
