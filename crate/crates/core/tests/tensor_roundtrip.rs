use oodshape_core::analysis::rng::CounterRng;
use oodshape_core::tensorio::{
    read_header, read_labels, read_tensor, write_labels, write_tensor, TensorFile,
};
use sha2::{Digest, Sha256};

#[test]
fn million_element_tensor_survives_a_round_trip() {
    let rng = CounterRng::new(99);
    let data: Vec<f32> = (0..1_000_000u64).map(|i| rng.normal_at(i) as f32).collect();
    let t = TensorFile::new(vec![1000, 1000], data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.npy");
    write_tensor(&t, &p).unwrap();

    let digest =
        |v: &[f32]| Sha256::digest(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>());
    let back = read_tensor(&p).unwrap();
    assert_eq!(back.shape, vec![1000, 1000]);
    assert_eq!(digest(&back.data), digest(&t.data));
    let h = read_header(&p).unwrap();
    assert_eq!(h.descr, "<f4");
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 128 + 4_000_000);
}

#[test]
fn labels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("y.npy");
    let y: Vec<i64> = (0..1000).map(|i| (i * 7 % 10) as i64).collect();
    write_labels(&y, &p).unwrap();
    assert_eq!(read_labels(&p).unwrap(), y);
}
