use std::collections::HashSet;

use ladx::rng::{self, Purpose};
use ladx::scenegen::*;
use ladx::textlatent::{tokenize, Vocabulary};
use ladx_nn::ParamStore;
use proptest::prelude::*;
use rand::SeedableRng;

fn encoder() -> (CondEncoder, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let enc = CondEncoder::new(&mut store, 16, DEFAULT_SLOTS, &mut rng::stream(1, Purpose::Init, 0));
    (enc, store)
}

fn differing_slots(a: &CondFeatures, b: &CondFeatures) -> Vec<usize> {
    (0..a.slots()).filter(|&i| a.slot(i) != b.slot(i)).collect()
}

fn scene_strategy() -> impl Strategy<Value = Scene> {
    any::<u64>().prop_map(|s| Scene::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(s)))
}

proptest! {
    #[test]
    fn captions_parse_back_to_their_scene(scene in scene_strategy()) {
        prop_assert_eq!(Scene::parse(&scene.caption()).unwrap(), scene);
    }

    #[test]
    fn captions_tokenize_within_default_length(scene in scene_strategy()) {
        let vocab = Vocabulary::default();
        let t = tokenize(&scene.caption(), &vocab, 24).unwrap();
        prop_assert_eq!(t.sep_position(&vocab), scene.token_len());
    }

    #[test]
    fn color_change_touches_only_its_slot(scene in scene_strategy(), which in 0usize..3, color in 0usize..4) {
        let (enc, store) = encoder();
        let which = which % scene.objects.len();
        let mut other = scene.clone();
        other.objects[which].color = Color::ALL[color];
        let (a, b) = (enc.encode_condition(&store, &scene), enc.encode_condition(&store, &other));
        let diff = differing_slots(&a, &b);
        if scene.objects[which].color == Color::ALL[color] {
            prop_assert!(diff.is_empty());
        } else {
            prop_assert_eq!(diff, vec![which]);
        }
    }
}

#[test]
fn single_object_captions_have_no_relation_word() {
    let c = generate_dataset(2, 500, 50, 50).unwrap();
    let relation_words = ["above", "below", "left", "right", "to", "of", "and"];
    let singles: Vec<_> = c.iter().filter(|e| e.scene.objects.len() == 1).collect();
    assert!(!singles.is_empty());
    for e in singles {
        assert!(e.caption.split(' ').all(|w| !relation_words.contains(&w)), "{}", e.caption);
    }
}

#[test]
fn default_sizes_give_disjoint_splits() {
    let c = generate_dataset(13, 8192, 512, 512).unwrap();
    let train: HashSet<&str> = c.train.iter().map(|e| e.caption.as_str()).collect();
    let val: HashSet<&str> = c.val.iter().map(|e| e.caption.as_str()).collect();
    let test: HashSet<&str> = c.test.iter().map(|e| e.caption.as_str()).collect();
    assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
    let lens: HashSet<usize> = c.iter().map(|e| e.scene.token_len()).collect();
    assert_eq!(lens, HashSet::from([5, 10, 13, 15, 18]));
}

#[test]
fn swapping_unrelated_objects_swaps_slots() {
    let (enc, store) = encoder();
    let o = |shape, color, size| Object { shape, color, size };
    let a = Scene::new(
        vec![
            o(Shape::Star, Color::Red, Size::Small),
            o(Shape::Circle, Color::Blue, Size::Large),
            o(Shape::Square, Color::Green, Size::Small),
        ],
        Relation::Below,
    )
    .unwrap();
    let mut b = a.clone();
    b.objects.swap(1, 2);
    let (fa, fb) = (enc.encode_condition(&store, &a), enc.encode_condition(&store, &b));
    assert_eq!(fa.slot(1), fb.slot(2));
    assert_eq!(fa.slot(2), fb.slot(1));
    assert_eq!(differing_slots(&fa, &fb), vec![1, 2]);
}

#[test]
fn null_condition_is_broadcast_and_stable() {
    let (enc, store) = encoder();
    let n = enc.null_condition(&store);
    assert_eq!(n.values.shape(), &[DEFAULT_SLOTS, 16]);
    assert!((1..DEFAULT_SLOTS).all(|i| n.slot(i) == n.slot(0)));
    assert_eq!(n, enc.null_condition(&store));
    let scene = Scene::parse("a small red circle").unwrap();
    let f = enc.encode_condition(&store, &scene);
    assert_eq!(f.values.shape(), &[DEFAULT_SLOTS, 16]);
    assert_ne!(f, n);
    assert!(f.values.all_finite());
}

#[test]
fn corpus_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let c = generate_dataset(9, 30, 3, 3).unwrap();
    c.save(&path).unwrap();
    assert_eq!(Corpus::load(&path).unwrap(), c);
    let again = dir.path().join("again.jsonl");
    generate_dataset(9, 30, 3, 3).unwrap().save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
