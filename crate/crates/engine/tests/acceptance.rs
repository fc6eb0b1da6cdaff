//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom;
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Read;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use drape_core::automask::{
    mask_for_addition, mask_for_recolor, mask_for_removal, mask_for_replacement, AutomaskError, SourceProvenance,
};
use drape_core::backend::{BackendError, Capability, Matter};
use drape_core::config::EngineConfig;
use drape_core::engine::Engine;
use drape_core::eval::{gold_scenario, shipped_corpus, weighted_average};
use drape_core::exec::Exec;
use drape_core::imaging::decode_rgb;
use drape_core::mask::{decode_mask_png, dilate_maxpool_with, intersect_with, union_with, AlphaMatte, BinaryMask};
use drape_core::planner::{Category, EditRequest};
use drape_core::store::ContentHash;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn mock_engine(dir: &Path, seed: u64) -> Engine {
    let mut cfg = EngineConfig::mock(dir);
    cfg.planner.seed = Some(seed);
    Engine::open(cfg).expect("engine opens")
}

fn put_photo(engine: &Engine, w: u32, h: u32) -> ContentHash {
    engine.store().put(&common::photo(w, h)).expect("store")
}

// ---- brute-force mask oracles -------------------------------------------

fn oracle_dilate(m: &BinaryMask, r: u32) -> BinaryMask {
    let (w, h) = m.dims();
    let mut out = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    out[(yy * w + xx) as usize] = true;
                }
            }
        }
    }
    BinaryMask::from_bits(w, h, out).unwrap()
}

fn oracle_union(ms: &[&BinaryMask]) -> BinaryMask {
    let (w, h) = ms[0].dims();
    let mut out = vec![false; (w * h) as usize];
    for m in ms {
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    out[(y * w + x) as usize] = true;
                }
            }
        }
    }
    BinaryMask::from_bits(w, h, out).unwrap()
}

fn oracle_intersect(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    let (w, h) = a.dims();
    let mut out = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = a.get(x, y) && b.get(x, y);
        }
    }
    BinaryMask::from_bits(w, h, out).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    let density = rng.random_range(0.0..0.4);
    let bits = (0..w * h).map(|_| rng.random_bool(density)).collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

fn mask_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..1000 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let a = random_mask(&mut rng, w, h);
        let b = random_mask(&mut rng, w, h);
        let c = random_mask(&mut rng, w, h);
        let r = rng.random_range(0..=8);
        for exec in [Exec::Sequential, Exec::Parallel] {
            ensure!(dilate_maxpool_with(&a, r, exec) == oracle_dilate(&a, r), "dilate differs on mask {i} (r={r}, {exec:?})");
            ensure!(
                union_with(&[&a, &b, &c], exec).unwrap() == oracle_union(&[&a, &b, &c]),
                "union differs on mask {i} ({exec:?})"
            );
            ensure!(intersect_with(&a, &b, exec).unwrap() == oracle_intersect(&a, &b), "intersect differs on mask {i} ({exec:?})");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("1000 masks, both executors, {:.2}s", elapsed.as_secs_f64()))
}

// ---- automask branches ---------------------------------------------------

fn source_lookup_branches() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock_engine(dir.path(), 1);
    let image = put_photo(&engine, 256, 320);
    let seg = || engine.gateway().unwrap().call_count(Capability::OpenVocabSeg);
    let run = |text: &str| {
        engine
            .planner(None)
            .execute_plan(&EditRequest {
                text: text.into(),
                image_ref: image.clone(),
            })
            .unwrap()
    };

    let hit = run("remove the pants");
    ensure!(hit.failure.is_none(), "{:?}", hit.failure);
    let provenance = hit.results[0].plan.source_provenance();
    ensure!(provenance == SourceProvenance::CosegLookup, "hit provenance {provenance:?}");
    ensure!(seg() == 0, "open-vocab called {} times on a hit", seg());

    let miss = run("remove the necklace");
    ensure!(miss.failure.is_none(), "{:?}", miss.failure);
    let provenance = miss.results[0].plan.source_provenance();
    ensure!(provenance == SourceProvenance::OpenVocabFallback, "miss provenance {provenance:?}");
    ensure!(seg() >= 1, "open-vocab not called on a miss");
    Ok(format!("hit: 0 calls; miss: {} call(s), fallback provenance", seg()))
}

struct FixedMatte(AlphaMatte);

impl Matter for FixedMatte {
    fn matte(&self, _: &ContentHash) -> Result<AlphaMatte, BackendError> {
        Ok(self.0.clone())
    }
}

fn recolor_containment() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock_engine(dir.path(), 2);
    let image = put_photo(&engine, 256, 320);
    let mut fixtures = 0;
    for text in ["make the pants red", "dye the top green", "make the shoes white", "turn the hair blue"] {
        let report = engine
            .planner(None)
            .execute_plan(&EditRequest {
                text: text.into(),
                image_ref: image.clone(),
            })
            .unwrap();
        ensure!(report.failure.is_none(), "{text}: {:?}", report.failure);
        let plan = &report.results[0].plan;
        ensure!(plan.category == Category::Recoloring, "{text} classified as {:?}", plan.category);
        let m_o = plan.source_mask().unwrap();
        ensure!(plan.mask.is_subset_of(m_o), "{text}: mask leaves the source region");
        let ones = FixedMatte(AlphaMatte::filled(m_o.width(), m_o.height(), 1.0).unwrap());
        ensure!(
            &mask_for_recolor(&image, m_o, &ones, 0.5).unwrap() == m_o,
            "{text}: opaque matte does not give the source mask"
        );
        fixtures += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let m_o = random_mask(&mut rng, w, h);
        if m_o.is_empty() {
            continue;
        }
        let alpha = (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect();
        match mask_for_recolor(&ContentHash::of(b"x"), &m_o, &FixedMatte(AlphaMatte::new(w, h, alpha).unwrap()), 0.5) {
            Ok(m) => ensure!(m.is_subset_of(&m_o), "random fixture escapes m_o"),
            Err(AutomaskError::DegenerateMask) => {}
            Err(e) => return Err(e.to_string()),
        }
        let ones = FixedMatte(AlphaMatte::filled(w, h, 1.0).unwrap());
        ensure!(mask_for_recolor(&ContentHash::of(b"x"), &m_o, &ones, 0.5).unwrap() == m_o, "opaque matte differs");
        fixtures += 1;
    }
    Ok(format!("{fixtures} fixtures"))
}

fn mask_relations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for _ in 0..300 {
        let (w, h) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let m_o = random_mask(&mut rng, w, h);
        if m_o.is_empty() {
            continue;
        }
        let occ: Vec<BinaryMask> = (0..rng.random_range(1..4)).map(|_| random_mask(&mut rng, w, h)).collect();
        let occ: Vec<&BinaryMask> = occ.iter().collect();
        let r = rng.random_range(0..6);
        let removal = mask_for_removal(&m_o, r).unwrap();
        let replacement = mask_for_replacement(&m_o, &occ, r).unwrap();
        ensure!(removal.is_subset_of(&replacement), "replacement misses part of removal");
        ensure!(mask_for_replacement(&m_o, &[], r).unwrap() == removal, "empty occlusion differs from removal");
        checked += 1;
    }
    let empty = BinaryMask::new(16, 16).unwrap();
    ensure!(
        matches!(mask_for_addition(&[], 3, "scarf"), Err(AutomaskError::PlacementNotFound(_))),
        "addition with no parts did not fail"
    );
    ensure!(
        matches!(mask_for_addition(&[&empty], 3, "scarf"), Err(AutomaskError::PlacementNotFound(_))),
        "addition on empty parts did not fail"
    );
    Ok(format!("{checked} random triples; addition fails fast"))
}

fn condition_coupling() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock_engine(dir.path(), 3);
    let image = put_photo(&engine, 256, 256);
    let pool = [
        "make the pants red",
        "dye the top green",
        "make the shoes white",
        "remove the shoes",
        "remove the necklace",
        "add a watch",
        "add a scarf",
        "replace the top with a coat",
        "replace the pants with a skirt",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let planner = engine.planner(None);
    let (mut jobs, mut recolorings) = (0, 0);
    while jobs < 50 {
        let n = rng.random_range(1..=3).min(50 - jobs);
        let clauses: Vec<String> = (0..n).map(|_| pool[rng.random_range(0..pool.len())].to_string()).collect();
        let report = planner
            .execute_clauses(&image, clauses, drape_core::planner::Derivation::Fallback)
            .unwrap();
        ensure!(report.failure.is_none(), "{:?}", report.failure);
        for r in &report.results {
            let recolor = r.task.category == Category::Recoloring;
            let edge = r.job.condition == "inpaint+edge";
            ensure!(recolor == edge, "job {} ({:?}) has condition {}", r.job.job_id, r.task.category, r.job.condition);
            ensure!(edge == r.job.edge_ref.is_some(), "edge ref inconsistent on {}", r.job.job_id);
            recolorings += usize::from(recolor);
            jobs += 1;
        }
    }
    let edge_calls = engine.gateway().unwrap().call_count(Capability::Edge);
    ensure!(edge_calls == recolorings, "{edge_calls} edge calls for {recolorings} recolorings");
    Ok(format!("{jobs} jobs, {recolorings} recolorings, {edge_calls} edge calls"))
}

fn table_aggregation() -> Outcome {
    let rows = [
        ("Vicuna-13B", [73.00, 87.14, 78.00], 78.64),
        ("Baichuan-13B-Chat", [10.00, 64.29, 10.00], 27.27),
        ("Vicuna-7B", [86.00, 94.29, 88.00], 89.09),
        ("ChatGLM-6B", [70.00, 81.43, 78.00], 75.45),
        ("ChatGLM2-6B", [75.00, 65.71, 62.00], 69.09),
        ("FastChat-T5-3B", [87.00, 81.43, 86.00], 85.00),
    ];
    let mut worst: f64 = 0.0;
    for (model, acc, published) in rows {
        let got = weighted_average(&[(acc[0], 100), (acc[1], 70), (acc[2], 50)]);
        let err = (got - published).abs();
        ensure!(err <= 0.01, "{model}: {got:.4} vs {published}");
        worst = worst.max(err);
    }
    Ok(format!("6 rows, max deviation {worst:.4}"))
}

fn end_to_end_session() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock_engine(dir.path(), 17);
    let image = put_photo(&engine, 384, 512);
    let start = Instant::now();
    let report = engine
        .planner(None)
        .execute_plan(&EditRequest {
            text: "replace the vest with a t-shirt and remove the necklace".into(),
            image_ref: image.clone(),
        })
        .unwrap();
    let elapsed = start.elapsed();
    ensure!(report.failure.is_none(), "{:?}", report.failure);
    ensure!(report.results.len() == 2, "{} tasks", report.results.len());
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    let get = |h: &ContentHash| engine.store().get(h).unwrap();
    for r in &report.results {
        let input = decode_rgb(&get(r.input_ref())).unwrap();
        let output = decode_rgb(&get(r.result_ref())).unwrap();
        let mask = decode_mask_png(&get(&r.job.mask_ref)).unwrap();
        ensure!(input.dimensions() == output.dimensions(), "task {} changed size", r.task_number);
        for (x, y, p) in input.enumerate_pixels() {
            ensure!(mask.get(x, y) || p == output.get_pixel(x, y), "task {} changed ({x},{y}) outside its mask", r.task_number);
        }
    }
    ensure!(report.results[0].input_ref() == &image, "first task did not start from the upload");
    ensure!(
        report.results[1].input_ref() == report.results[0].result_ref(),
        "second task input is not the first output"
    );
    Ok(format!("2 tasks in {:.2}s", elapsed.as_secs_f64()))
}

// ---- engine process ------------------------------------------------------

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn start_server(config: &Path, port: u16) -> Result<Server, String> {
    let child = Command::new(env!("CARGO_BIN_EXE_engine"))
        .args(["serve", "--config"])
        .arg(config)
        .args(["--bind", &format!("127.0.0.1:{port}")])
        .env("RUST_LOG", "error")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let server = Server {
        child,
        base: format!("http://127.0.0.1:{port}"),
    };
    let http = common::client();
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline {
        if http.get(format!("{}/api/sessions/probe/transcript", server.base)).send().is_ok() {
            return Ok(server);
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    Err("engine did not start listening".into())
}

fn snapshot(base: &str, id: &str) -> Result<(Value, BTreeMap<String, Vec<u8>>), String> {
    let http = common::client();
    let session: Value = http
        .get(format!("{base}/api/sessions/{id}/transcript"))
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    let mut refs: Vec<String> = session["imageSlots"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for turn in session["turns"].as_array().unwrap() {
        for a in turn["attachments"].as_array().unwrap() {
            refs.push(a["ref"].as_str().unwrap().to_string());
        }
    }
    let mut artifacts = BTreeMap::new();
    for r in refs {
        let mut bytes = Vec::new();
        http.get(format!("{base}/api/artifacts/{r}"))
            .send()
            .and_then(|resp| resp.error_for_status())
            .map_err(|e| format!("artifact {r}: {e}"))?
            .read_to_end(&mut bytes)
            .map_err(|e| e.to_string())?;
        artifacts.insert(r, bytes);
    }
    Ok((session, artifacts))
}

fn persistence_replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("engine.toml");
    std::fs::write(&config, "data_dir = \"data\"\n\n[planner]\nseed = 21\n").unwrap();
    let port = free_port();
    let http = common::client();

    let mut first = start_server(&config, port)?;
    let created: Value = http
        .post(format!("{}/api/sessions", first.base))
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    let id = created["id"].as_str().unwrap().to_string();
    http.post(format!("{}/api/sessions/{id}/image", first.base))
        .body(common::photo(256, 320))
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| e.to_string())?;
    let reply: Value = http
        .post(format!("{}/api/sessions/{id}/messages", first.base))
        .json(&serde_json::json!({ "text": "replace the top with a coat and remove the shoes" }))
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    ensure!(reply["state"]["name"] == "review", "session ended in {}", reply["state"]);
    let before = snapshot(&first.base, &id)?;

    first.child.kill().map_err(|e| e.to_string())?;
    first.child.wait().map_err(|e| e.to_string())?;
    drop(first);

    let second = start_server(&config, port)?;
    let after = snapshot(&second.base, &id)?;
    ensure!(before.0 == after.0, "transcript differs after restart");
    ensure!(before.1 == after.1, "artifact set differs after restart");
    Ok(format!(
        "{} turns, {} artifacts identical after SIGKILL",
        after.0["turns"].as_array().unwrap().len(),
        after.1.len()
    ))
}

fn eval_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cases = shipped_corpus();
    // knows the gold answer for most cases but not all, so reports are not trivially perfect
    let scenario = gold_scenario(&cases[..180]);
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();
    let run = || -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_engine"))
            .args(["eval", "--format", "json", "--backend"])
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "eval exited {:?}", out.status);
        String::from_utf8(out.stdout).map_err(|e| e.to_string())
    };
    let reports = [run()?, run()?, run()?];
    ensure!(reports[0] == reports[1] && reports[1] == reports[2], "reports differ across runs");
    let report: Value = serde_json::from_str(&reports[0]).map_err(|e| e.to_string())?;
    let cases_scored = report["caseResults"].as_array().map_or(0, Vec::len);
    ensure!(cases_scored == 320, "{cases_scored} case results");
    Ok(format!(
        "3 identical reports, average {:.2}%, classification {:.2}%",
        report["weightedAverage"].as_f64().unwrap_or(f64::NAN),
        report["classificationAccuracy"].as_f64().unwrap_or(f64::NAN)
    ))
}

fn main() -> ExitCode {
    type Check = (&'static str, fn() -> Outcome);
    let criteria: [Check; 9] = [
        ("mask-algebra oracle equivalence", mask_oracle_equivalence),
        ("source mask lookup branches", source_lookup_branches),
        ("recolor containment", recolor_containment),
        ("removal/replacement/addition relations", mask_relations),
        ("edge condition coupling", condition_coupling),
        ("benchmark average aggregation", table_aggregation),
        ("end-to-end mock session", end_to_end_session),
        ("persistence replay", persistence_replay),
        ("eval determinism", eval_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
