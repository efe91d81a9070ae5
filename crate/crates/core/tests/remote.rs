use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use splatgen_core::guidance::wire::{decode_request, encode_error, encode_plane, encode_response};
use splatgen_core::guidance::{
    Conditioning, Guidance, GuidanceError, GuidanceRequest, GuidanceResponse, RemoteGuidance, RequestKind,
};
use splatgen_core::scene::{init_cloud, Camera, ImageBuffer, SignedImage};
use splatgen_core::trainer::{train_stage1, Mode, ReferenceInput, TrainConfig, TrainError};

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

/// Serves `handler` on an ephemeral port until the test process exits.
fn serve<F>(handler: F) -> String
where
    F: Fn(&str) -> Reply + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let reply = handler(&body);
            thread::sleep(reply.delay);
            let _ = req.respond(tiny_http::Response::from_string(reply.body).with_status_code(reply.status));
        }
    });
    url
}

fn ok(body: String) -> Reply {
    Reply { status: 200, body, delay: Duration::ZERO }
}

fn zero_residual(body: &str) -> Reply {
    let req = decode_request(body).unwrap();
    ok(encode_response(&GuidanceResponse::Residual(SignedImage::zeros(req.image.width, req.image.height))))
}

fn client(url: &str) -> RemoteGuidance {
    RemoteGuidance::new(url, Duration::from_secs(10))
}

fn request(kind: RequestKind) -> GuidanceRequest {
    let mut image = ImageBuffer::filled(12, 10, [0.0; 3], 1.0);
    for (i, p) in image.rgb.iter_mut().enumerate() {
        *p = [i as f64 / 120.0, 0.1, 0.9];
    }
    GuidanceRequest {
        kind,
        image,
        camera: Camera::orbit(40.0, 10.0, 2.0, 49.0, 12, 10),
        background: [1.0; 3],
        timestep: 0.5,
        conditioning: Conditioning::Text { prompt: "a red ball".into() },
    }
}

fn small(mode: Mode) -> TrainConfig {
    let base = match mode {
        Mode::Image => TrainConfig::image(),
        Mode::Text => TrainConfig::text("a red ball"),
    };
    TrainConfig { steps: 4, resolution_start: 16, resolution_end: 32, init_count: 200, densify_interval: 2, ..base }
}

#[test]
fn zero_residual_server_leaves_the_cloud_unchanged() {
    let url = serve(zero_residual);
    let cfg = small(Mode::Text);
    let out = train_stage1(&cfg, &client(&url), None).unwrap();
    let init = init_cloud(cfg.init_count, cfg.init_radius, cfg.seed).unwrap();
    assert_eq!(out.cloud.gaussians, init.gaussians);
    assert_eq!(out.trace.len(), 4);
    assert!(out.trace.iter().all(|r| r.sds_norm == 0.0));
}

#[test]
fn image_mode_requests_carry_reference_and_pose_delta() {
    let (tx, rx) = mpsc::channel();
    let url = serve(move |body| {
        let req = decode_request(body).unwrap();
        tx.send(req.clone()).unwrap();
        zero_residual(body)
    });
    let cfg = TrainConfig { steps: 2, ..small(Mode::Image) };
    let reference = ReferenceInput { image: ImageBuffer::filled(40, 40, [0.8, 0.2, 0.1], 1.0), elevation: 5.0 };
    train_stage1(&cfg, &client(&url), Some(&reference)).unwrap();
    let seen: Vec<GuidanceRequest> = rx.try_iter().collect();
    assert_eq!(seen.len(), 2);
    for req in &seen {
        assert_eq!(req.kind, RequestKind::Residual);
        assert_eq!((req.image.width, req.image.height), (req.camera.width, req.camera.height));
        assert!(req.timestep > 0.0 && req.timestep <= 1.0);
        let Conditioning::Image { reference: r, delta } = &req.conditioning else { panic!("text conditioning in image mode") };
        assert_eq!((r.width, r.height), (req.image.width, req.image.height));
        assert!((delta.elevation - (req.camera.elevation - 5.0)).abs() < 1e-9);
        assert!(r.rgb.iter().all(|p| (p[0] - 0.8).abs() < 1e-6));
    }
}

#[test]
fn echo_refiner_round_trips_in_f32_and_keeps_alpha() {
    let url = serve(|body| {
        let req = decode_request(body).unwrap();
        ok(encode_response(&GuidanceResponse::Refined(req.image)))
    });
    let mut req = request(RequestKind::Refine);
    req.image.alpha[3] = 0.25;
    let refined = client(&url).guide(&req).unwrap().into_refined().unwrap();
    assert_eq!(refined.alpha, req.image.alpha);
    for (a, b) in refined.rgb.iter().flatten().zip(req.image.rgb.iter().flatten()) {
        assert_eq!(*a, f64::from(*b as f32));
    }
}

#[test]
fn wrong_dimensions_are_malformed() {
    let url = serve(|_| {
        let body = format!("{{\"residual_b64\":\"{}\"}}", encode_plane(&vec![[0.0; 3]; 12 * 10 - 1]));
        ok(body)
    });
    let err = client(&url).guide(&request(RequestKind::Residual)).unwrap_err();
    assert!(matches!(err, GuidanceError::Malformed(_)), "{err:?}");
}

#[test]
fn wrong_payload_kind_is_malformed() {
    let url = serve(|body| {
        let req = decode_request(body).unwrap();
        ok(encode_response(&GuidanceResponse::Refined(req.image)))
    });
    let err = client(&url).guide(&request(RequestKind::Residual)).unwrap_err();
    assert!(matches!(err, GuidanceError::Malformed(_)), "{err:?}");
}

#[test]
fn server_error_field_and_status() {
    let url = serve(|_| Reply { status: 500, body: encode_error("model not loaded"), delay: Duration::ZERO });
    let err = client(&url).guide(&request(RequestKind::Residual)).unwrap_err();
    assert_eq!(err, GuidanceError::Server("model not loaded".into()));
    let url = serve(|_| Reply { status: 503, body: "busy".into(), delay: Duration::ZERO });
    let err = client(&url).guide(&request(RequestKind::Residual)).unwrap_err();
    assert!(matches!(err, GuidanceError::Server(ref m) if m.contains("503")), "{err:?}");
}

#[test]
fn refused_connection_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let err = client(&url).guide(&request(RequestKind::Residual)).unwrap_err();
    assert!(matches!(err, GuidanceError::Connection { .. }), "{err:?}");
    assert!(err.is_transport());
    match train_stage1(&small(Mode::Text), &client(&url), None) {
        Err(TrainError::Guidance { step: 0, source }) => assert!(source.is_transport()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn slow_server_times_out() {
    let url = serve(|body| Reply { delay: Duration::from_secs(3), ..zero_residual(body) });
    let remote = RemoteGuidance::new(&url, Duration::from_millis(300));
    let err = remote.guide(&request(RequestKind::Residual)).unwrap_err();
    assert!(matches!(err, GuidanceError::Timeout { .. }), "{err:?}");
}

#[test]
fn endpoint_path_is_appended_once() {
    assert_eq!(client("http://h:1").endpoint(), "http://h:1/guidance");
    assert_eq!(client("http://h:1/").endpoint(), "http://h:1/guidance");
    assert_eq!(client("http://h:1/guidance").endpoint(), "http://h:1/guidance");
}
