use std::collections::HashSet;
use std::fs;

use bcnn::dataset::{
    decode_image, encode_pgm, encode_ppm, load_manifest, resize_to_input, split_and_shuffle, synth_generate_with,
    DatasetManifest, Frame, ManifestSource, Record, SampleSource, SynthOptions, MANIFEST_NAME,
};

fn manifest(n: usize) -> DatasetManifest {
    let records = (0..n)
        .map(|i| Record {
            path: format!("dir/frame {i}.ppm"),
            label: u8::from(i % 3 == 0),
        })
        .collect();
    DatasetManifest::new("root", records).unwrap()
}

#[test]
fn manifest_round_trip_large() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(10_000);
    let path = dir.path().join("m.csv");
    m.write(&path).unwrap();
    let back = load_manifest(&path, Some("root".as_ref())).unwrap();
    assert_eq!(back, m);
}

#[test]
fn manifest_errors_name_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "a.ppm,1\nb.ppm,7\n").unwrap();
    let err = load_manifest(&path, None).unwrap_err().to_string();
    assert!(err.contains(":2") || err.contains("line 2"), "{err}");
}

#[test]
fn ppm_and_pgm_round_trip() {
    let rgb: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 37 % 256) as u8).collect();
    let f = Frame::new(5, 4, rgb).unwrap();
    assert_eq!(decode_image(&encode_ppm(&f)).unwrap(), f);
    let gray: Vec<u8> = (0..6).map(|i| i * 40).collect();
    let g = decode_image(&encode_pgm(3, 2, &gray)).unwrap();
    assert_eq!(g.pixel(2, 1), [200, 200, 200]);
}

#[test]
fn split_properties_over_many_seeds() {
    let m = manifest(101);
    let all: HashSet<String> = m.records().iter().map(|r| r.path.clone()).collect();
    let mut orders = HashSet::new();
    for seed in 0..100 {
        let (train, test) = split_and_shuffle(&m, seed, 0.8).unwrap();
        assert_eq!(train.len(), 81);
        assert_eq!(test.len(), 20);
        let tr: HashSet<String> = train.records().iter().map(|r| r.path.clone()).collect();
        let te: HashSet<String> = test.records().iter().map(|r| r.path.clone()).collect();
        assert!(tr.is_disjoint(&te));
        assert_eq!(&tr | &te, all);
        assert_eq!(split_and_shuffle(&m, seed, 0.8).unwrap(), (train.clone(), test));
        orders.insert(train.to_csv());
    }
    assert_eq!(orders.len(), 100, "seeds should give distinct splits");
}

#[test]
fn synth_corpus_is_reproducible_and_loadable() {
    let opts = SynthOptions { width: 64, height: 48 };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synth_generate_with(a.path(), 12, 0.5, 21, opts).unwrap();
    synth_generate_with(b.path(), 12, 0.5, 21, opts).unwrap();
    assert_eq!(ma.positives(), 6);
    for name in ma.records().iter().map(|r| r.path.as_str()).chain([MANIFEST_NAME]) {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let loaded = load_manifest(a.path().join(MANIFEST_NAME), None).unwrap();
    let src = ManifestSource::new(loaded);
    let x = src.load(3).unwrap();
    assert_eq!(x.shape().to_string(), "1x3x118x118");
    let frame = decode_image(&fs::read(a.path().join(&ma.records()[3].path)).unwrap()).unwrap();
    assert_eq!(resize_to_input(&frame).unwrap(), x);
}
