mod common;

use common::{tiny_corpus, tiny_model};
use ladx::checkpoint::*;
use ladx::trainer::{new_optimizer, TrainConfig};
use ladx::Error;

fn sample_bytes() -> Vec<u8> {
    let model = tiny_model(7, &tiny_corpus());
    let cfg = TrainConfig::default();
    latent_to_raw(&model, Stage::Pretrained, &new_optimizer(&cfg), Some(&cfg)).to_bytes()
}

#[test]
fn save_load_save_is_byte_identical() {
    let bytes = sample_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ladx");
    std::fs::write(&path, &bytes).unwrap();
    let ck = load_latent(&path).unwrap();
    assert_eq!(ck.stage, Stage::Pretrained);
    assert!(ck.model.stats.is_some());
    let again = dir.path().join("again.ladx");
    save_latent(&again, &ck.model, ck.stage, &ck.optimizer, ck.train.as_ref()).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
}

#[test]
fn truncation_is_detected() {
    let bytes = sample_bytes();
    for cut in [1, 100, bytes.len() / 2] {
        let err = RawCheckpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch), "{err:?}");
    }
    assert!(matches!(RawCheckpoint::from_bytes(&bytes[..2]), Err(Error::Truncated)));
}

#[test]
fn corruption_is_detected() {
    let mut bytes = sample_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(RawCheckpoint::from_bytes(&bytes), Err(Error::ChecksumMismatch)));
}

#[test]
fn version_and_magic_are_checked() {
    let bytes = sample_bytes();
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(matches!(RawCheckpoint::from_bytes(&v), Err(Error::VersionMismatch { found: 9, expected: 1 })));
    let mut m = bytes;
    m[0] = b'X';
    assert!(matches!(RawCheckpoint::from_bytes(&m), Err(Error::BadMagic)));
}

#[test]
fn missing_file_names_the_artifact() {
    let err = load_latent(std::path::Path::new("/nonexistent/model.ladx")).err().unwrap();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err:?}");
}

#[test]
fn extra_tensors_are_rejected() {
    let mut raw = RawCheckpoint::from_bytes(&sample_bytes()).unwrap();
    raw.tensors.push(("bogus".into(), TensorData::F32(ladx_nn::Tensor::zeros(vec![1]))));
    assert!(matches!(latent_from_raw(raw), Err(Error::Malformed(_))));
}
