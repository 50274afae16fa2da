//! The TCP server driven by real sockets.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use neuroloop::bridge::protocol::ErrorCode;
use neuroloop::bridge::{decode_line, Message, Server, ServerConfig, ServerHandle, SessionEvent};
use neuroloop::dsp::EegChunk;
use neuroloop::sim::{load_replay, run_scenario, write_chunk, Montage, Scenario, Segment, StateName};

struct Client {
    out: TcpStream,
    lines: std::io::Lines<BufReader<TcpStream>>,
}

impl Client {
    fn connect(server: &ServerHandle) -> Self {
        let s = TcpStream::connect(server.local_addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        Self {
            out: s.try_clone().unwrap(),
            lines: BufReader::new(s).lines(),
        }
    }

    fn send(&mut self, line: &str) {
        writeln!(self.out, "{line}").unwrap();
    }

    fn send_chunk(&mut self, id: &str, chunk: &EegChunk) {
        write_chunk(&mut self.out, Some(id), chunk).unwrap();
    }

    /// Next message, or `None` once the server closes the connection.
    fn recv(&mut self) -> Option<Message> {
        let line = self.lines.next()?.ok()?;
        Some(decode_line(&line).unwrap_or_else(|e| panic!("undecodable server line {line:?}: {}", e.message)))
    }

    /// Every message until the server closes the connection.
    fn drain(&mut self) -> Vec<Message> {
        std::iter::from_fn(|| self.recv()).collect()
    }
}

fn spawn(config: ServerConfig) -> ServerHandle {
    Server::bind("127.0.0.1:0", config).unwrap().spawn().unwrap()
}

fn neutral_chunks(seconds: f64, montage: Montage) -> Vec<EegChunk> {
    let mut s = Scenario::new(1, vec![Segment::new(StateName::Neutral, seconds)]);
    s.montage = montage;
    run_scenario(&s).unwrap().map(|c| c.unwrap().chunk).collect()
}

fn hello(id: &str) -> String {
    format!(r#"{{"type":"hello","session_id":"{id}","montage":"adaptive18"}}"#)
}

#[test]
fn hello_is_answered_with_resolved_config_and_block_start() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(r#"{"type":"hello","session_id":"s1"}"#);
    let Some(Message::Config(echo)) = c.recv() else { panic!("expected config echo") };
    assert_eq!(echo.session_id, "s1");
    assert_eq!(echo.channels, Montage::Rnet64.labels());
    assert_eq!(echo.config.threshold, 0.15);
    assert_eq!(echo.config.window_s, 20.0);
    assert_eq!(
        (echo.config.stream_initial, echo.config.stream_floor, echo.config.stream_ceiling),
        (115, 8, 400)
    );
    let mut saw_block_start = false;
    c.send(r#"{"type":"bye","session_id":"s1"}"#);
    for m in c.drain() {
        if let Message::Event(e) = m {
            if let SessionEvent::BlockStart { stream, .. } = e.event {
                assert_eq!(stream, 115);
                saw_block_start = true;
            }
        }
    }
    assert!(saw_block_start);
}

#[test]
fn forty_seconds_of_data_yield_one_decision() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(&hello("s2"));
    for chunk in neutral_chunks(40.0, Montage::Adaptive18) {
        c.send_chunk("s2", &chunk);
    }
    c.send(r#"{"type":"bye","session_id":"s2"}"#);
    let msgs = c.drain();
    let decisions: Vec<_> = msgs
        .iter()
        .filter_map(|m| match m {
            Message::Decision(d) => Some(d.decision),
            _ => None,
        })
        .collect();
    assert_eq!(decisions.len(), 1, "{msgs:?}");
    assert_eq!(decisions[0].t, 40.0);
    assert!(matches!(msgs.last(), Some(Message::Bye(_))));
}

#[test]
fn wrong_channel_count_is_rejected_and_closes() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(&hello("s3"));
    let labels: Vec<String> = Montage::Rnet64.labels()[..32].to_vec();
    let chunk = EegChunk::new(0.0, 500.0, labels, vec![vec![0.0; 500]; 32]).unwrap();
    c.send_chunk("s3", &chunk);
    let msgs = c.drain();
    let err = msgs.iter().find_map(|m| match m {
        Message::Error(e) => Some(e),
        _ => None,
    });
    let err = err.expect("error message");
    assert_eq!(err.code, ErrorCode::Protocol);
    assert!(err.message.contains("32 channels"), "{}", err.message);
}

#[test]
fn malformed_lines_get_structured_errors_and_the_session_continues() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(&hello("s4"));
    c.send(r#"{"type":"eeg","session_id":"s4","t":"#);
    c.send("not json at all");
    c.send(r#"{"type":"time_req","session_id":"s4","t1":7}"#);
    c.send(r#"{"type":"bye","session_id":"s4"}"#);
    let msgs = c.drain();
    let errors: Vec<_> = msgs
        .iter()
        .filter_map(|m| match m {
            Message::Error(e) => Some(e),
            _ => None,
        })
        .collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|e| e.code == ErrorCode::Malformed && e.offset.is_some()));
    assert_eq!(errors.iter().map(|e| e.line).collect::<Vec<_>>(), [Some(2), Some(3)]);
    assert!(msgs.iter().any(|m| matches!(m, Message::TimeResp(r) if r.t1 == 7)));
    assert!(matches!(msgs.last(), Some(Message::Bye(_))));
}

#[test]
fn data_before_hello_is_a_protocol_violation() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    let chunk = &neutral_chunks(1.0, Montage::Adaptive18)[0];
    c.send_chunk("early", chunk);
    let msgs = c.drain();
    assert!(matches!(&msgs[..], [Message::Error(e)] if e.code == ErrorCode::Protocol), "{msgs:?}");
}

#[test]
fn mismatched_session_id_closes() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(&hello("mine"));
    c.send(r#"{"type":"time_req","session_id":"theirs","t1":1}"#);
    let msgs = c.drain();
    assert!(msgs
        .iter()
        .any(|m| matches!(m, Message::Error(e) if e.code == ErrorCode::Protocol && e.message.contains("mine"))));
}

#[test]
fn conflicting_hello_is_a_config_error() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(r#"{"type":"hello","session_id":"s5","policy":"negative","block":"n_back_positive"}"#);
    let msgs = c.drain();
    assert!(matches!(&msgs[..], [Message::Error(e)] if e.code == ErrorCode::Config), "{msgs:?}");
}

#[test]
fn slow_processing_raises_a_lag_event() {
    let server = spawn(ServerConfig {
        process_delay: Duration::from_millis(100),
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&server);
    c.send(&hello("s6"));
    for chunk in neutral_chunks(20.0, Montage::Adaptive18) {
        c.send_chunk("s6", &chunk);
    }
    c.send(r#"{"type":"bye","session_id":"s6"}"#);
    let lags: Vec<f64> = c
        .drain()
        .into_iter()
        .filter_map(|m| match m {
            Message::Event(e) => match e.event {
                SessionEvent::Lag { queued_seconds, .. } => Some(queued_seconds),
                _ => None,
            },
            _ => None,
        })
        .collect();
    assert_eq!(lags.len(), 1, "{lags:?}");
    assert!(lags[0] > 10.0);
}

#[test]
fn time_exchange_sets_the_offset_applied_to_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let server = spawn(ServerConfig {
        log_dir: Some(dir.path().to_path_buf()),
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&server);
    c.send(&hello("s7"));
    // Server-initiated style exchange completed by the client: the client
    // clock reads 1 s behind a server that answered instantly.
    c.send(r#"{"type":"time_resp","session_id":"s7","t1":0,"t2":1000000,"t3":1000000,"t4":0}"#);
    let chunk = &neutral_chunks(1.0, Montage::Adaptive18)[0];
    c.send_chunk("s7", chunk);
    c.send(r#"{"type":"bye","session_id":"s7"}"#);
    let msgs = c.drain();
    let offset = msgs.iter().find_map(|m| match m {
        Message::Event(e) => match e.event {
            SessionEvent::ClockOffset { offset_us, round_trip_us } => Some((offset_us, round_trip_us)),
            _ => None,
        },
        _ => None,
    });
    assert_eq!(offset, Some((1_000_000, 0)));
    let recorded = load_replay(&dir.path().join("s7.chunks.jsonl")).unwrap();
    assert_eq!(recorded.len(), 1);
    assert_eq!(recorded[0].start_time(), chunk.start_time() + 1.0);
    assert_eq!(recorded[0].samples(), chunk.samples());
}

#[test]
fn time_request_is_answered_with_server_stamps() {
    let server = spawn(ServerConfig::default());
    let mut c = Client::connect(&server);
    c.send(&hello("s8"));
    c.send(r#"{"type":"time_req","session_id":"s8","t1":123}"#);
    c.send(r#"{"type":"bye","session_id":"s8"}"#);
    let resp = c.drain().into_iter().find_map(|m| match m {
        Message::TimeResp(r) => Some(r),
        _ => None,
    });
    let r = resp.expect("time_resp");
    assert_eq!(r.t1, 123);
    assert!(r.t3 >= r.t2);
    assert_eq!(r.t4, None);
}

#[test]
fn session_log_holds_events_and_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let server = spawn(ServerConfig {
        log_dir: Some(dir.path().to_path_buf()),
        ..ServerConfig::default()
    });
    let mut c = Client::connect(&server);
    c.send(&hello("s9"));
    for chunk in neutral_chunks(60.0, Montage::Adaptive18) {
        c.send_chunk("s9", &chunk);
    }
    c.send(r#"{"type":"bye","session_id":"s9"}"#);
    c.drain();
    let text = std::fs::read_to_string(dir.path().join("s9.log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = records
        .iter()
        .map(|r| r.get("event").and_then(|e| e.as_str()).unwrap_or("decision"))
        .collect();
    assert_eq!(kinds, ["bands", "block_start", "decision", "decision", "block_end"]);
    assert_eq!(load_replay(&dir.path().join("s9.chunks.jsonl")).unwrap().len(), 60);
}

#[test]
fn concurrent_sessions_are_independent() {
    let server = spawn(ServerConfig::default());
    let chunks = neutral_chunks(40.0, Montage::Adaptive18);
    let handles: Vec<_> = (0..3)
        .map(|i| {
            let mut c = Client::connect(&server);
            let chunks = chunks.clone();
            std::thread::spawn(move || {
                let id = format!("c{i}");
                c.send(&hello(&id));
                for chunk in &chunks {
                    c.send_chunk(&id, chunk);
                }
                c.send(&format!(r#"{{"type":"bye","session_id":"{id}"}}"#));
                c.drain()
                    .into_iter()
                    .filter_map(|m| match m {
                        Message::Decision(d) => {
                            assert_eq!(d.session_id, id);
                            Some(d.decision)
                        }
                        _ => None,
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(results.iter().all(|r| r.len() == 1 && *r == results[0]));
}
