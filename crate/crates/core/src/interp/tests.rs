use super::*;
use crate::ir::{parse_program, visit};
use crate::pipeline::transform;
use crate::schedule::parse_script;
use crate::{ScheduleState, WorkloadDesc};

fn gemm(m: u64, n: u64, k: u64, script: &str) -> Program {
    let w = WorkloadDesc::gemm(m, n, k);
    ScheduleState::gemm(&w, None).apply_all(&parse_script(script).unwrap()).unwrap().lower(&w).unwrap()
}

fn matmul(a: &[i64], b: &[i64], m: usize, n: usize, k: usize) -> Vec<i64> {
    let mut c = vec![0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                c[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    c
}

const THREE_STAGE: &str = "cache_read A shared A_shared\ncache_read B shared B_shared\ntile C mo=2 mi=2 no=2 ni=2 ko=4 ki=2\n\
                           pipeline A_shared 3\npipeline B_shared 3";

#[test]
fn untransformed_gemm_matches_matmul() {
    let p = gemm(4, 4, 4, "tile C mo=2 mi=2 no=2 ni=2 ko=2 ki=2");
    let ident: Vec<i64> = (0..16).map(|i| (i % 5 == 0) as i64).collect();
    let b: Vec<i64> = (0..16).collect();
    let inputs = Tensors::from([("A".into(), ident.clone()), ("B".into(), b.clone())]);
    let (out, _) = run(&p, &inputs, ExecMode::Strict, 0).unwrap();
    assert_eq!(out["C"], b);
    let inputs = random_inputs(&p, 3);
    let (out, _) = run(&p, &inputs, ExecMode::Strict, 0).unwrap();
    assert_eq!(out["C"], matmul(&inputs["A"], &inputs["B"], 4, 4, 4));
}

#[test]
fn transformed_gemm_is_equivalent_without_faults() {
    let p = gemm(4, 4, 8, THREE_STAGE);
    let t = transform(&p).unwrap();
    let inputs = random_inputs(&p, 9);
    let (out, trace) = run(&t, &inputs, ExecMode::Strict, 5).unwrap();
    assert_eq!(out["C"], matmul(&inputs["A"], &inputs["B"], 4, 4, 8));
    assert!(trace.events.iter().all(|e| e.counters.in_flight() <= e.capacity as u64));
    assert!(check_equivalence(&p, &t, &inputs).unwrap().equal);
}

fn drop_first_wait(p: &Program) -> Program {
    let mut q = p.clone();
    let mut target = None;
    visit::walk(&q.body, &mut |path, s| {
        if target.is_none() && matches!(s, Stmt::Sync { kind: SyncKind::ConsumerWait, .. }) && path.len() > 2 {
            target = Some(path.to_vec());
        }
    });
    let path = target.unwrap();
    visit::parent_list_mut(&mut q.body, &path).unwrap().remove(*path.last().unwrap());
    q
}

#[test]
fn missing_wait_is_detected() {
    let p = gemm(4, 4, 8, THREE_STAGE);
    let t = drop_first_wait(&transform(&p).unwrap());
    let inputs = random_inputs(&p, 4);
    let (out, _) = run(&t, &inputs, ExecMode::StaleRead, 0).unwrap();
    assert_ne!(out["C"], matmul(&inputs["A"], &inputs["B"], 4, 4, 8));
    assert!(matches!(run(&t, &inputs, ExecMode::Strict, 0), Err(InterpError::StaleRead { .. })));
}

#[test]
fn equivalence_reflexive_and_detects_wrong_slot() {
    let p = gemm(4, 4, 8, THREE_STAGE);
    let inputs = random_inputs(&p, 1);
    assert!(check_equivalence(&p, &p, &inputs).unwrap().equal);

    let mut t = transform(&p).unwrap();
    visit::for_each_access_mut(&mut t.body, &mut |a| {
        if a.buffer == "A_shared" && a.indices[0].to_string() == "ko % 3" {
            a.indices[0] = (Expr::var("ko") + 1).modulo(3);
        }
    });
    let r = check_equivalence(&p, &t, &inputs);
    let mode_free = run(&t, &inputs, ExecMode::StaleRead, 2).unwrap().0;
    assert_ne!(mode_free["C"], run(&p, &inputs, ExecMode::Strict, 0).unwrap().0["C"]);
    match r {
        Ok(e) => {
            let d = e.divergence.unwrap();
            assert_eq!(d.buffer, "C");
            assert_eq!(d.index.len(), 2);
        }
        Err(EquivError::Right(InterpError::StaleRead { .. })) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn overflow_and_protocol_faults() {
    let p = parse_program(
        "buffer A global f32[4];\nbuffer S shared f32[2, 4];\nbuffer C global f32[4];\npipeline S shared capacity 2;\n\
         for i seq 0..3 {\n  producer_acquire S;\n  copy_async S[i % 2, 0] <- A[0];\n  producer_commit S;\n}\n\
         consumer_wait S;\nC[0] = id(S[0, 0]) flops 1;\n",
    )
    .unwrap();
    let inputs = random_inputs(&p, 0);
    assert!(matches!(run(&p, &inputs, ExecMode::Strict, 0), Err(InterpError::Overflow { capacity: 2, .. })));
    assert!(run(&p, &inputs, ExecMode::StaleRead, 0).is_ok());

    let p = parse_program(
        "buffer A global f32[4];\nbuffer S shared f32[4];\nbuffer C global f32[4];\npipeline S shared capacity 2;\n\
         consumer_wait S;\nproducer_acquire S;\ncopy_async S[0] <- A[0];\nproducer_commit S;\nconsumer_wait S;\nC[0] = id(S[0]) flops 1;\n",
    )
    .unwrap();
    let err = run(&p, &random_inputs(&p, 0), ExecMode::Strict, 0).unwrap_err();
    assert!(err.to_string().contains("wait with no committed stage"), "{err}");
}

#[test]
fn input_errors() {
    let p = gemm(4, 4, 4, "tile C mo=2 mi=2 no=2 ni=2 ko=2 ki=2");
    let mut inputs = random_inputs(&p, 0);
    inputs.remove("B");
    assert_eq!(run(&p, &inputs, ExecMode::Strict, 0).unwrap_err(), InterpError::UnboundInput("B".into()));
    let mut inputs = random_inputs(&p, 0);
    inputs.get_mut("A").unwrap().pop();
    assert!(matches!(run(&p, &inputs, ExecMode::Strict, 0), Err(InterpError::ShapeMismatch { expected: 16, got: 15, .. })));
    let mut inputs = random_inputs(&p, 0);
    inputs.insert("C".into(), vec![0; 16]);
    assert!(matches!(run(&p, &inputs, ExecMode::Strict, 0), Err(InterpError::UnknownInput(_))));

    let q = parse_program("buffer A global f32[2];\nbuffer C global f32[2];\nC[0] = id(A[2]) flops 1;\n").unwrap();
    assert!(matches!(run(&q, &random_inputs(&q, 0), ExecMode::Strict, 0), Err(InterpError::OutOfBounds { .. })));
}

#[test]
fn ops() {
    assert_eq!(apply_op("mma", &[1, 2, 3]), 7);
    assert_eq!(apply_op("relu", &[-4]), 0);
    assert_eq!(apply_op("neg", &[i64::MIN]), i64::MIN);
    assert_ne!(apply_op("foo", &[1, 2]), apply_op("foo", &[2, 1]));
    assert_ne!(apply_op("foo", &[1]), apply_op("bar", &[1]));
}

#[test]
fn trace_is_json_lines_and_deterministic() {
    let t = transform(&gemm(4, 4, 8, THREE_STAGE)).unwrap();
    let inputs = random_inputs(&t, 2);
    let a = run(&t, &inputs, ExecMode::Strict, 7).unwrap();
    let b = run(&t, &inputs, ExecMode::Strict, 7).unwrap();
    assert_eq!(a, b);
    let text = a.1.to_json_lines();
    assert_eq!(text.lines().count(), a.1.events.len());
    let first: TraceEvent = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first.kind, SyncKind::ProducerAcquire);
}
