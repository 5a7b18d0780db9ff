use ovpano_core::eval::evaluate;
use ovpano_core::sample::{prepare, Sample};
use ovpano_core::scene::{make_dataset, Scene, SceneConfig};
use ovpano_core::train::{ablation_ladder, default_milestones, train, EvalConfig, Task, TrainConfig, TrainState};
use ovpano_core::vocab::{build_text_embeddings, gen_prototypes, Vocabulary};
use ovpano_core::Error;

struct Fixture {
    task: Task,
    train: Vec<Sample>,
    held_out: Vec<Sample>,
    cfg: TrainConfig,
}

fn fixture(epochs: usize) -> Fixture {
    let vocab = Vocabulary::street();
    let provider = gen_prototypes(0, vocab.len(), 16).unwrap().with_label_noise(0.1);
    let scene_cfg = SceneConfig::street(&vocab).unwrap();
    let (scenes, _) = make_dataset(&scene_cfg, &vocab, &provider, 8, 3, 5).unwrap();
    let prep = |s: &[Scene]| s.iter().map(|x| prepare(x, &scene_cfg.grid).unwrap()).collect::<Vec<_>>();
    let mut cfg = TrainConfig::new(11);
    cfg.model.lidar_hidden = 8;
    cfg.model.d_q = 12;
    cfg.model.q_learn = 12;
    cfg.model.ffn_hidden = 16;
    cfg.model.mask_width = 8;
    cfg.epochs = epochs;
    cfg.milestones = default_milestones(epochs);
    let text = build_text_embeddings(&vocab, &provider).unwrap();
    Fixture {
        task: Task::new(vocab, text, &cfg.model).unwrap(),
        train: prep(&scenes[..8]),
        held_out: prep(&scenes[8..]),
        cfg,
    }
}

#[test]
fn total_loss_halves_from_first_to_last_epoch() {
    let f = fixture(30);
    let mut st = TrainState::new(&f.cfg).unwrap();
    let mut sums = vec![0.0; f.cfg.epochs];
    train(&mut st, &f.cfg, &f.task, &f.train, None, |log, _| {
        sums[log.epoch] += log.total;
        Ok(())
    })
    .unwrap();
    let (first, last) = (sums[0], sums[f.cfg.epochs - 1]);
    assert!(last <= 0.5 * first, "first {first} last {last}");
}

#[test]
fn interrupted_training_continues_bit_exactly() {
    let f = fixture(2);
    let mut full = TrainState::new(&f.cfg).unwrap();
    train(&mut full, &f.cfg, &f.task, &f.train, None, |_, _| Ok(())).unwrap();

    let mut split = TrainState::new(&f.cfg).unwrap();
    train(&mut split, &f.cfg, &f.task, &f.train, Some(5), |_, _| Ok(())).unwrap();
    assert_eq!(split.step, 5);
    train(&mut split, &f.cfg, &f.task, &f.train, None, |_, _| Ok(())).unwrap();
    assert_eq!(split.step, full.step);
    assert_eq!(split.model.params, full.model.params);
}

#[test]
fn ladder_rows_log_only_enabled_terms() {
    let f = fixture(1);
    let rows = ablation_ladder(&f.cfg, &EvalConfig::default());
    let names: Vec<_> = rows.iter().map(|r| r.name).collect();
    assert_eq!(names, ["baseline", "+assign", "+fusion", "+object", "+voxel"]);
    let expected: [&[&str]; 5] = [
        &["cls", "mask"],
        &["cls", "mask"],
        &["cls", "mask"],
        &["cls", "mask", "object"],
        &["cls", "mask", "object", "voxel"],
    ];
    for (row, want) in rows.iter().zip(expected) {
        let task = Task::new(f.task.vocab.clone(), f.task.text.clone(), &row.train.model).unwrap();
        let mut st = TrainState::new(&row.train).unwrap();
        let mut seen = Vec::new();
        train(&mut st, &row.train, &task, &f.train[..1], None, |log, _| {
            seen = log.components.iter().map(|c| c.0).collect();
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, want, "{}", row.name);
        assert_eq!(row.eval.ensemble.is_some(), row.name != "+object" && row.name != "+voxel");
    }
}

#[test]
fn empty_sets_are_rejected() {
    let f = fixture(1);
    let mut st = TrainState::new(&f.cfg).unwrap();
    let r = train(&mut st, &f.cfg, &f.task, &[], None, |_, _| Ok(()));
    assert!(matches!(r, Err(Error::Configuration(_))));
    let r = evaluate(&st.model, &f.task, &[], &EvalConfig::default());
    assert!(matches!(r, Err(Error::Configuration(_))));
    assert!(evaluate(&st.model, &f.task, &f.held_out, &EvalConfig::default()).is_ok());
}
