use advsel::data::{cache, load_csv, load_idx, parse_csv, parse_idx, parse_idx_images, parse_idx_labels, Dataset};
use advsel::numerics::{checkpoint, Matrix, Model};
use advsel::Error;
use proptest::prelude::*;

fn be(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

fn images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = be(&[0x803, count, rows, cols]);
    v.extend_from_slice(pixels);
    v
}

fn labels(values: &[u8]) -> Vec<u8> {
    let mut v = be(&[0x801, values.len() as u32]);
    v.extend_from_slice(values);
    v
}

#[test]
fn idx_fixture_decodes_by_byte_arithmetic() {
    let d = parse_idx(&images(2, 2, 2, &[0, 255, 128, 0, 255, 1, 254, 9]), &labels(&[0, 7])).unwrap();
    assert_eq!(d.features().shape(), (2, 4));
    assert_eq!(d.features().row(0), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
    assert_eq!(d.features().row(1), &[1.0, 1.0 / 255.0, 254.0 / 255.0, 9.0 / 255.0]);
    assert_eq!(d.labels(), &[0, 7]);
    assert_eq!(d.class_count(), 8);
}

#[test]
fn idx_images_are_flattened_row_major() {
    // one 2x3 image: rows [1 2 3] [4 5 6]
    let bytes = images(1, 2, 3, &[1, 2, 3, 4, 5, 6]);
    let (count, rows, cols, px) = parse_idx_images(&bytes).unwrap();
    assert_eq!((count, rows, cols), (1, 2, 3));
    assert_eq!(px, &[1, 2, 3, 4, 5, 6]);
    let d = parse_idx(&bytes, &labels(&[0])).unwrap();
    assert_eq!(d.features().row(0)[3], 4.0 / 255.0);
}

#[test]
fn idx_errors_are_distinct() {
    let good = images(2, 1, 2, &[1, 2, 3, 4]);
    let lab = labels(&[0, 1]);

    let mut bad = good.clone();
    bad[3] = 0x01;
    match parse_idx(&bad, &lab) {
        Err(Error::WrongMagic { expected, found, .. }) => assert_eq!((expected, found), (0x803, 0x801)),
        other => panic!("{other:?}"),
    }
    // label and image files swapped
    assert!(matches!(parse_idx_labels(&good), Err(Error::WrongMagic { expected: 0x801, found: 0x803, .. })));

    assert!(matches!(parse_idx(&good[..3], &lab), Err(Error::Truncated { needed: 16, found: 3, .. })));
    assert!(matches!(parse_idx(&good[..19], &lab), Err(Error::Truncated { needed: 20, found: 19, .. })));
    assert!(matches!(parse_idx(&good, &lab[..9]), Err(Error::Truncated { needed: 10, found: 9, .. })));
    assert!(matches!(parse_idx(&good, &labels(&[0])), Err(Error::CountMismatch { images: 2, labels: 1 })));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(parse_idx(&trailing, &lab), Err(Error::Format { .. })));

    let huge = be(&[0x803, u32::MAX, u32::MAX, u32::MAX]);
    assert!(parse_idx_images(&huge).is_err());
}

#[test]
fn idx_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, images(1, 1, 2, &[0, 255])).unwrap();
    std::fs::write(&lp, labels(&[1])).unwrap();
    let d = load_idx(&ip, &lp).unwrap();
    assert_eq!(d.features().row(0), &[0.0, 1.0]);
    assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io { .. })));
}

#[test]
fn csv_scales_columns_and_names_labels() {
    let text = "x,y,label\n0,10,no\n5,10,yes\n10,10,no\n";
    let d = parse_csv(text.as_bytes(), "label").unwrap();
    assert_eq!(d.features().as_slice(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
    assert_eq!(d.labels(), &[0, 1, 0]);
    assert_eq!(d.label_names().unwrap(), &["no", "yes"]);
}

#[test]
fn csv_rejects_bad_input() {
    assert!(matches!(parse_csv("x,y\n1,2\n".as_bytes(), "label"), Err(Error::Format { .. })));
    assert!(matches!(parse_csv("x,label\nnan,a\n".as_bytes(), "label"), Err(Error::Format { .. })));
    assert!(matches!(parse_csv("x,label\n1,a\n2\n".as_bytes(), "label"), Err(Error::Format { .. })));
    assert!(matches!(load_csv("/nonexistent/data.csv", "label"), Err(Error::Io { .. })));
}

#[test]
fn cache_layout_is_as_documented() {
    let x = Matrix::from_vec(1, 2, vec![0.25, 1.0]).unwrap();
    let d = Dataset::new(x, vec![1], 2).unwrap().with_label_names(vec!["a".into(), "bc".into()]).unwrap();
    let bytes = cache::to_bytes(&d);
    let mut want = b"ADVSELD1".to_vec();
    want.extend_from_slice(&1u64.to_le_bytes());
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(&0.25f64.to_bits().to_le_bytes());
    want.extend_from_slice(&1.0f64.to_bits().to_le_bytes());
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(b"a");
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(b"bc");
    assert_eq!(bytes, want);
}

#[test]
fn cache_rejects_corruption() {
    let d = Dataset::new(Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(), vec![0, 1], 2).unwrap();
    let bytes = cache::to_bytes(&d);
    let mut magic = bytes.clone();
    magic[7] = b'9';
    assert!(matches!(cache::from_bytes(&magic), Err(Error::Format { .. })));
    assert!(matches!(cache::from_bytes(&bytes[..20]), Err(Error::Truncated { .. })));
    let mut label = bytes.clone();
    label[28 + 16] = 5;
    assert!(matches!(cache::from_bytes(&label), Err(Error::LabelOutOfRange { .. })));
    let mut rows = bytes.clone();
    rows[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(cache::from_bytes(&rows).is_err());
}

#[test]
fn checkpoint_container_round_trips() {
    let model = Model::new_seeded(&[3, 4, 2], 8).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    assert_eq!(&bytes[..8], b"ADVSELM1");
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(checkpoint::to_bytes(&back), bytes);
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(checkpoint::from_bytes(&magic).is_err());
}

proptest! {
    /// Cut or corrupted containers produce an error, never a panic.
    #[test]
    fn damaged_containers_fail_cleanly(cut in 0usize..200, flip in 0usize..200, byte in any::<u8>()) {
        let img = images(3, 2, 2, &[9; 12]);
        let lab = labels(&[0, 1, 2]);
        let d = parse_idx(&img, &lab).unwrap();
        let c = cache::to_bytes(&d);
        let m = checkpoint::to_bytes(&Model::new_seeded(&[4, 3], 0).unwrap());
        for blob in [&img, &lab, &c, &m] {
            if cut < blob.len() {
                let short = &blob[..cut];
                let _ = parse_idx(short, &lab);
                prop_assert!(cache::from_bytes(short).is_err());
                prop_assert!(checkpoint::from_bytes(short).is_err());
            }
            let mut noisy = blob.clone();
            let i = flip % noisy.len();
            noisy[i] = byte;
            let _ = parse_idx(&noisy, &lab);
            let _ = parse_idx(&img, &noisy);
            let _ = cache::from_bytes(&noisy);
            let _ = checkpoint::from_bytes(&noisy);
        }
    }
}
