use std::path::{Path, PathBuf};

use deqntk::data::{load_cifar10_files, load_mnist, load_mnist_files, Normalization, Split};
use deqntk::Error;

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn mnist_subset_loads_with_unit_rows() {
    let train = load_mnist(&mnist_dir(), Split::Train, Normalization::UnitSample).unwrap();
    assert_eq!((train.len(), train.dim), (4000, 784));
    assert_eq!(train.image_shape, Some((28, 28, 1)));
    for r in train.rows() {
        assert!((r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }
    let mut hist = [0usize; 10];
    train.labels.iter().for_each(|&l| hist[l] += 1);
    assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
    let test = load_mnist(&mnist_dir(), Split::Test, Normalization::None).unwrap();
    assert_eq!(test.len(), 1000);
    assert!(test.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for d in [n, rows, cols] {
        b.extend(d.to_be_bytes());
    }
    b.extend(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn idx_errors_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good_i = write(dir.path(), "i", &idx_images(2, 2, 2, &[0, 255, 0, 0, 1, 2, 3, 4]));
    let good_l = write(dir.path(), "l", &idx_labels(&[3, 7]));
    let ds = load_mnist_files(&good_i, &good_l, Normalization::None).unwrap();
    assert_eq!(ds.row(0), &[0.0, 1.0, 0.0, 0.0]);
    assert_eq!(ds.labels, vec![3, 7]);

    let mut bad = idx_images(2, 2, 2, &[0; 8]);
    bad[3] = 4;
    let bad_magic = write(dir.path(), "bm", &bad);
    let truncated = write(dir.path(), "tr", &idx_images(2, 2, 2, &[0; 7]));
    let short_labels = write(dir.path(), "sl", &idx_labels(&[1]));
    for (i, l) in [(&bad_magic, &good_l), (&truncated, &good_l), (&good_i, &short_labels)] {
        let e = load_mnist_files(i, l, Normalization::None).unwrap_err();
        assert!(matches!(e, Error::Data { .. }), "{e}");
        assert_eq!(e.exit_code(), 3);
    }
    let missing = load_mnist_files(&dir.path().join("nope"), &good_l, Normalization::None).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

fn cifar_record(label: u8, f: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    // Channel-major: all red, then green, then blue, each 32×32 row-major.
    let mut r = vec![label];
    for c in 0..3 {
        for p in 0..1024 {
            r.push(f(c, p));
        }
    }
    r
}

#[test]
fn cifar_records_become_hwc_unit_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = cifar_record(4, |c, p| if p == 0 { [255, 0, 0][c] } else { (c * 40 + p % 7) as u8 });
    bytes.extend(cifar_record(9, |_, _| 0));
    let path = write(dir.path(), "b.bin", &bytes);
    let raw = load_cifar10_files(std::slice::from_ref(&path), Normalization::None).unwrap();
    assert_eq!((raw.len(), raw.dim, raw.image_shape), (2, 3072, Some((32, 32, 3))));
    assert_eq!(raw.labels, vec![4, 9]);
    assert_eq!(&raw.row(0)[..3], &[1.0, 0.0, 0.0]);
    assert_eq!(&raw.row(0)[3..6], &[1.0 / 255.0, 41.0 / 255.0, 81.0 / 255.0]);

    let unit = load_cifar10_files(&[path], Normalization::UnitPixel).unwrap();
    for n in 0..2 {
        unit.image(n).unwrap().check_unit_pixels().unwrap();
    }
    let u = 1.0 / 3f64.sqrt();
    assert!(unit.row(1).iter().all(|&v| v == u));

    let bad_size = write(dir.path(), "s.bin", &bytes[..3000]);
    assert!(matches!(load_cifar10_files(&[bad_size], Normalization::None), Err(Error::Data { .. })));
    let bad_label = write(dir.path(), "l.bin", &cifar_record(10, |_, _| 1));
    assert!(matches!(load_cifar10_files(&[bad_label], Normalization::None), Err(Error::Data { .. })));
}
