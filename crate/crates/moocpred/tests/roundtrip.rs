//! Corpus directories survive a write/read/write cycle byte for byte.

use moocpred::io;
use moocpred_core::synth::{generate_corpus, ScenarioConfig};

fn tiny_corpus(seed: u64) -> Vec<moocpred_core::datamodel::CourseIteration> {
    let mut cfg = ScenarioConfig::small(seed);
    cfg.course_sets = 2;
    cfg.iterations_per_set = 1;
    cfg.students_per_course = 40;
    let (courses, _) = generate_corpus(&cfg).unwrap();
    courses
}

#[test]
fn write_read_write_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let courses = tiny_corpus(11);
    let first = dir.path().join("first");
    io::write_corpus(&first, &courses).unwrap();

    let reloaded = io::read_corpus(&first).unwrap();
    assert_eq!(reloaded.len(), courses.len());
    let second = dir.path().join("second");
    io::write_corpus(&second, &reloaded).unwrap();

    for course in &courses {
        let id = course.id();
        for name in [
            io::EVENTS_FILE,
            io::SCHEDULE_FILE,
            io::META_FILE,
            io::LABELS_FILE,
        ] {
            let a = std::fs::read(first.join(&id).join(name)).unwrap();
            let b = std::fs::read(second.join(&id).join(name)).unwrap();
            assert_eq!(a, b, "{id}/{name} changed across a round trip");
        }
    }
}

#[test]
fn labels_file_has_one_row_per_student() {
    let dir = tempfile::tempdir().unwrap();
    let courses = tiny_corpus(12);
    io::write_corpus(dir.path(), &courses).unwrap();
    for course in &courses {
        let text =
            std::fs::read_to_string(dir.path().join(course.id()).join(io::LABELS_FILE)).unwrap();
        // Header plus one line per labeled student.
        assert_eq!(text.lines().count(), course.labels.len() + 1);
        assert!(text.starts_with("student_id,label\n"));
    }
}

#[test]
fn corrupted_events_line_is_reported_with_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let courses = tiny_corpus(13);
    io::write_corpus(dir.path(), &courses).unwrap();

    let id = courses[0].id();
    let events_path = dir.path().join(&id).join(io::EVENTS_FILE);
    let mut text = std::fs::read_to_string(&events_path).unwrap();
    let keep: Vec<&str> = text.lines().take(3).collect();
    text = format!("{}\n{}\nnot json\n", keep[0], keep[1]);
    std::fs::write(&events_path, text).unwrap();

    let err = io::read_course(&dir.path().join(&id)).unwrap_err();
    let message = err.to_string();
    assert!(message.contains(&id), "error names the course: {message}");
    assert!(message.contains("line 3"), "error names the line: {message}");
}

#[test]
fn ground_truth_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::small(14);
    cfg.course_sets = 1;
    cfg.iterations_per_set = 1;
    cfg.students_per_course = 30;
    let (_, truth) = generate_corpus(&cfg).unwrap();
    io::write_truth(dir.path(), &truth).unwrap();
    let reloaded = io::read_truth(dir.path()).unwrap();
    assert_eq!(
        serde_json::to_string(&truth).unwrap(),
        serde_json::to_string(&reloaded).unwrap()
    );
}
