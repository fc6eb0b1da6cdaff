use std::sync::{Arc, Mutex};

use drape_core::backend::mock::synthetic;
use drape_core::config::EngineConfig;
use drape_core::engine::Engine;
use drape_core::imaging::encode_rgb_png;
use drape_core::planner::JobRecord;
use drape_core::session::{
    replay_log, AttachmentKind, Author, Session, SessionError, SessionManager, SessionState, SessionUpdate,
};
use proptest::prelude::*;

fn manager(dir: &std::path::Path) -> SessionManager {
    let mut cfg = EngineConfig::mock(dir);
    cfg.planner.seed = Some(7);
    SessionManager::open(Arc::new(Engine::open(cfg).unwrap())).unwrap()
}

fn photo(w: u32, h: u32) -> Vec<u8> {
    encode_rgb_png(&synthetic::photo(w, h).unwrap()).unwrap()
}

fn job_of(mgr: &SessionManager, session: &Session, turn: usize, task: usize) -> JobRecord {
    let att = session.turns[turn]
        .attachments
        .iter()
        .find(|a| a.kind == AttachmentKind::JobRecord && a.task_number == Some(task))
        .expect("job record attachment");
    serde_json::from_slice(&mgr.engine().store().get(&att.hash).unwrap()).unwrap()
}

#[test]
fn feedback_edits_the_previous_output() {
    let dir = tempfile::tempdir().unwrap();
    let mgr = manager(dir.path());
    let id = mgr.create_session().unwrap().id;
    let original = mgr.attach_image(&id, &photo(256, 320)).unwrap();

    mgr.handle_message(&id, "replace the top with a t-shirt").unwrap();
    let after_first = mgr.get_session(&id).unwrap();
    assert_eq!(after_first.state, SessionState::Review);
    let first = job_of(&mgr, &after_first, 1, 1);
    assert_eq!(first.input_ref, original);

    mgr.handle_message(&id, "make the t-shirt blue instead").unwrap();
    let after_second = mgr.get_session(&id).unwrap();
    assert_eq!(after_second.state, SessionState::Review);
    let second = job_of(&mgr, &after_second, 3, 1);
    assert_eq!(second.input_ref, first.result_ref);
    assert_eq!(after_second.image_slots["original"], original);
    assert_eq!(after_second.current_image(), Some(&second.result_ref));
}

#[test]
fn small_images_are_rejected_with_a_reason() {
    let dir = tempfile::tempdir().unwrap();
    let mgr = manager(dir.path());
    let id = mgr.create_session().unwrap().id;
    match mgr.attach_image(&id, &photo(200, 400)) {
        Err(SessionError::ImageRejected(reason)) => assert!(reason.contains("256"), "{reason}"),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert!(matches!(
        mgr.attach_image(&id, b"not an image"),
        Err(SessionError::ImageRejected(_))
    ));
    assert_eq!(mgr.get_session(&id).unwrap().state, SessionState::AwaitingImage);
}

#[test]
fn unknown_session_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let mgr = manager(dir.path());
    assert!(matches!(mgr.get_session("nope"), Err(SessionError::NotFound(_))));
    assert!(matches!(mgr.handle_message("nope", "hi"), Err(SessionError::NotFound(_))));
}

#[derive(Debug, Clone)]
enum Action {
    Attach,
    Say(&'static str),
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        1 => Just(Action::Attach),
        3 => prop::sample::select(vec![
            "make the pants red",
            "remove the shoes",
            "replace the top with a coat, then add a watch",
            "add a scarf",
            "remove the cape",
            "what can you do?",
            "thanks!",
            "remove the shoes and make it pop",
        ])
        .prop_map(Action::Say),
    ]
}

type StateLog = Arc<Mutex<Vec<(String, SessionState)>>>;

fn shared() -> &'static (tempfile::TempDir, SessionManager, StateLog) {
    static CELL: std::sync::OnceLock<(tempfile::TempDir, SessionManager, StateLog)> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mgr = manager(dir.path());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        mgr.set_observer(Arc::new(move |id: &str, u: &SessionUpdate| {
            if let SessionUpdate::State { state } = u {
                sink.lock().unwrap().push((id.to_string(), *state));
            }
        }));
        (dir, mgr, seen)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn random_dialogues_respect_the_machine(actions in prop::collection::vec(action(), 1..6)) {
        let (_dir, mgr, seen) = shared();
        let image = photo(256, 256);
        let id = mgr.create_session().unwrap().id;
        let mut previous_turns = Vec::new();
        for a in &actions {
            match a {
                Action::Attach => { mgr.attach_image(&id, &image).unwrap(); }
                Action::Say(text) => {
                    let reply = mgr.handle_message(&id, text).unwrap();
                    prop_assert_eq!(reply.author, Author::Assistant);
                }
            }
            let session = mgr.get_session(&id).unwrap();
            prop_assert!(!session.state.is_busy());
            prop_assert!(session.turns.starts_with(&previous_turns), "transcript rewritten");
            for (i, t) in session.turns.iter().enumerate() {
                prop_assert_eq!(t.index, i);
            }
            previous_turns = session.turns.clone();
        }

        let states: Vec<SessionState> = seen
            .lock()
            .unwrap()
            .iter()
            .filter(|(sid, _)| *sid == id)
            .map(|(_, s)| *s)
            .collect();
        let mut from = SessionState::AwaitingImage;
        for to in states {
            prop_assert!(from.can_transition(to), "illegal {} -> {}", from, to);
            from = to;
        }
        let snapshot = mgr.get_session(&id).unwrap();
        prop_assert_eq!(from, snapshot.state);
        let (replayed, _) = replay_log(&mgr.log_path(&id)).unwrap();
        prop_assert_eq!(&replayed, snapshot.as_ref());
    }
}

#[test]
fn interrupted_edit_recovers_on_reopen() {
    use drape_core::session::{LogLine, SessionEvent};
    use std::io::Write;

    let dir = tempfile::tempdir().unwrap();
    let id = {
        let mgr = manager(dir.path());
        let id = mgr.create_session().unwrap().id;
        mgr.attach_image(&id, &photo(256, 256)).unwrap();
        // simulate a crash right after planning began
        let path = mgr.log_path(&id);
        let (_, seq) = replay_log(&path).unwrap();
        let line = LogLine {
            seq,
            event: SessionEvent::StateChanged {
                from: SessionState::Ready,
                to: SessionState::Planning,
            },
        };
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{}", serde_json::to_string(&line).unwrap()).unwrap();
        id
    };
    let mgr = manager(dir.path());
    let session = mgr.get_session(&id).unwrap();
    assert_eq!(session.state, SessionState::Ready);
    let last = session.turns.last().unwrap();
    assert_eq!(last.author, Author::Assistant);
    assert!(last.text.contains("interrupted"), "{}", last.text);
    let (replayed, _) = replay_log(&mgr.log_path(&id)).unwrap();
    assert_eq!(&replayed, session.as_ref());
    mgr.handle_message(&id, "remove the shoes").unwrap();
    assert_eq!(mgr.get_session(&id).unwrap().state, SessionState::Review);
}
