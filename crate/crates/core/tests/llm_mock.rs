use proptest::prelude::*;
use sha2::{Digest, Sha256};

use scengen_core::llmio::{ChatClient, ChatMessage, ChatRequest, LlmError, MockClient};

fn fixed_request() -> ChatRequest {
    ChatRequest::new(
        "gpt-4o",
        vec![ChatMessage::system("You analyse traffic."), ChatMessage::user("Scene: ego at (0, 0), heading 0.")],
    )
}

/// Independent rendering of the documented key layout.
fn reference_key(r: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(b"model\x1f");
    h.update(r.model.as_bytes());
    for m in &r.messages {
        h.update(b"\x1e");
        h.update(m.role.as_str().as_bytes());
        h.update(b"\x1f");
        h.update((m.content.len() as u64).to_le_bytes());
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

#[test]
fn request_key_is_pinned() {
    let r = fixed_request();
    assert_eq!(r.key(), reference_key(&r));
    assert_eq!(r.key(), "335a23107154fa071977028a6d78ec2b5fdb687857a8c1dda3e63855ad335002");
}

proptest! {
    #[test]
    fn keys_separate_message_boundaries(a in ".{0,20}", b in ".{0,20}", c in ".{0,20}") {
        let one = ChatRequest::new("m", vec![ChatMessage::system(a.clone()), ChatMessage::user(format!("{b}{c}"))]);
        let two = ChatRequest::new("m", vec![ChatMessage::system(format!("{a}{b}")), ChatMessage::user(c.clone())]);
        prop_assert_eq!(one.key(), reference_key(&one));
        if !b.is_empty() {
            prop_assert_ne!(one.key(), two.key());
        }
    }
}

#[test]
fn replay_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    let r = fixed_request();
    let path =
        MockClient::write_fixture(dir.path(), &r, "BEHAVIOR: Emergency Braking | RISK: high | ACCEL: -6").unwrap();
    assert_eq!(path, MockClient::fixture_path(dir.path(), &r.key()));
    let mock = MockClient::new(dir.path());
    let first = mock.complete(&r).unwrap();
    assert_eq!(mock.complete(&r).unwrap(), first);
    assert_eq!(mock.calls(), 2);
    assert_eq!(first.content, "BEHAVIOR: Emergency Braking | RISK: high | ACCEL: -6");
}

#[test]
fn replay_failures_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let r = fixed_request();
    let mock = MockClient::new(dir.path());
    assert!(matches!(mock.complete(&r), Err(LlmError::MissingFixture { key, .. }) if key == r.key()));

    std::fs::write(MockClient::fixture_path(dir.path(), &r.key()), "{ nope").unwrap();
    assert!(matches!(mock.complete(&r), Err(LlmError::Fixture { .. })));

    let other = ChatRequest::new("gpt-4o", vec![ChatMessage::system("different")]);
    std::fs::write(
        MockClient::fixture_path(dir.path(), &r.key()),
        format!("{{\"request_digest\": \"{}\", \"content\": \"x\"}}", other.key()),
    )
    .unwrap();
    assert!(matches!(mock.complete(&r), Err(LlmError::Fixture { .. })));

    let no_system = ChatRequest::new("gpt-4o", vec![ChatMessage::user("hi")]);
    assert!(matches!(mock.complete(&no_system), Err(LlmError::InvalidRequest(_))));
}

#[test]
fn recording_fills_misses_once() {
    let dir = tempfile::tempdir().unwrap();
    let source = tempfile::tempdir().unwrap();
    let r = fixed_request();
    MockClient::write_fixture(source.path(), &r, "recorded reply").unwrap();
    let recorder = MockClient::recording(dir.path(), Box::new(MockClient::new(source.path())));
    assert_eq!(recorder.complete(&r).unwrap().content, "recorded reply");
    drop(source);
    // the live side is gone; the new fixture serves the replay
    assert_eq!(MockClient::new(dir.path()).complete(&r).unwrap().content, "recorded reply");
}
