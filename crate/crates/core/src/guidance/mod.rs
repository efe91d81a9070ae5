//! Guidance contract for both optimization stages.
//!
//! A [`Guidance`] maps a rendered view to either a signed image-space residual
//! (stage 1) or a refined image (stage 2). The oracle implementations compare
//! against renders of a known ground-truth cloud; [`RemoteGuidance`] forwards
//! requests to an HTTP server speaking the JSON protocol in [`wire`].

mod remote;
pub mod wire;

use thiserror::Error;

use crate::renderer::render;
use crate::scene::{Camera, GaussianCloud, ImageBuffer, PoseDelta, SignedImage};

pub use remote::RemoteGuidance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Residual,
    Refine,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Residual => "residual",
            RequestKind::Refine => "refine",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    /// Reference view (RGB composited on white) and the pose change to the requested view.
    Image { reference: ImageBuffer, delta: PoseDelta },
    Text { prompt: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub kind: RequestKind,
    pub image: ImageBuffer,
    pub camera: Camera,
    /// Background the image was composited over.
    pub background: [f64; 3],
    /// Noise level in `(0, 1]`.
    pub timestep: f64,
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuidanceResponse {
    Residual(SignedImage),
    Refined(ImageBuffer),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot reach guidance endpoint {endpoint}: {message}")]
    Connection { endpoint: String, message: String },
    #[error("guidance endpoint {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("malformed guidance response: {0}")]
    Malformed(String),
    #[error("guidance server error: {0}")]
    Server(String),
}

impl GuidanceError {
    pub fn is_transport(&self) -> bool {
        matches!(self, GuidanceError::Connection { .. } | GuidanceError::Timeout { .. })
    }
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.timestep > 0.0 && self.timestep <= 1.0) {
            return Err(GuidanceError::InvalidRequest(format!("timestep {} outside (0, 1]", self.timestep)));
        }
        if self.image.width != self.camera.width || self.image.height != self.camera.height {
            return Err(GuidanceError::InvalidRequest("image size differs from camera size".into()));
        }
        self.image.validate().map_err(|e| GuidanceError::InvalidRequest(e.to_string()))
    }
}

impl GuidanceResponse {
    /// Checks that the response answers `request`: right kind, same size, finite values.
    pub fn check(&self, request: &GuidanceRequest) -> Result<(), GuidanceError> {
        let (w, h) = (request.image.width, request.image.height);
        let ok = match (self, request.kind) {
            (GuidanceResponse::Residual(r), RequestKind::Residual) => {
                r.width == w && r.height == h && r.data.len() == (w * h) as usize && r.is_finite()
            }
            (GuidanceResponse::Refined(img), RequestKind::Refine) => {
                img.width == w && img.height == h && img.validate().is_ok()
            }
            _ => return Err(GuidanceError::Malformed("response kind does not match request".into())),
        };
        if ok {
            Ok(())
        } else {
            Err(GuidanceError::Malformed("response dimensions or values invalid".into()))
        }
    }

    pub fn into_residual(self) -> Result<SignedImage, GuidanceError> {
        match self {
            GuidanceResponse::Residual(r) => Ok(r),
            GuidanceResponse::Refined(_) => Err(GuidanceError::Malformed("expected a residual".into())),
        }
    }

    pub fn into_refined(self) -> Result<ImageBuffer, GuidanceError> {
        match self {
            GuidanceResponse::Refined(r) => Ok(r),
            GuidanceResponse::Residual(_) => Err(GuidanceError::Malformed("expected a refined image".into())),
        }
    }
}

pub trait Guidance: Sync {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;
}

/// Ground-truth-scene guidance for synthetic runs.
#[derive(Debug, Clone)]
pub struct OracleGuidance {
    pub scene: GaussianCloud,
    /// Fixed refine blend; `None` uses the request timestep.
    pub blend: Option<f64>,
}

impl OracleGuidance {
    pub fn new(scene: GaussianCloud) -> Self {
        Self { scene, blend: None }
    }

    pub fn ground_truth(&self, camera: &Camera, background: [f64; 3]) -> ImageBuffer {
        render(&self.scene, camera, background)
    }

    /// The scene composited over `coarse` instead of a flat background, so pixels the
    /// scene leaves uncovered keep their coarse value.
    pub fn refine_target(&self, camera: &Camera, coarse: &ImageBuffer) -> ImageBuffer {
        let mut truth = render(&self.scene, camera, [0.0; 3]);
        for ((t, a), (c, ca)) in truth.rgb.iter_mut().zip(truth.alpha.iter_mut()).zip(coarse.rgb.iter().zip(&coarse.alpha)) {
            let rest = 1.0 - *a;
            *t = std::array::from_fn(|k| t[k] + rest * c[k]);
            *a += rest * ca;
        }
        truth
    }
}

/// `image - truth` per pixel and channel.
pub fn oracle_residual(image: &ImageBuffer, truth: &ImageBuffer) -> SignedImage {
    let data = image.rgb.iter().zip(&truth.rgb).map(|(a, b)| std::array::from_fn(|k| a[k] - b[k])).collect();
    SignedImage { width: image.width, height: image.height, data }
}

/// `blend * truth + (1 - blend) * coarse`, alpha included.
pub fn oracle_refine(coarse: &ImageBuffer, truth: &ImageBuffer, blend: f64) -> ImageBuffer {
    let mix = |c: f64, t: f64| blend * t + (1.0 - blend) * c;
    ImageBuffer {
        width: coarse.width,
        height: coarse.height,
        rgb: coarse.rgb.iter().zip(&truth.rgb).map(|(c, t)| std::array::from_fn(|k| mix(c[k], t[k]))).collect(),
        alpha: coarse.alpha.iter().zip(&truth.alpha).map(|(&c, &t)| mix(c, t)).collect(),
    }
}

impl Guidance for OracleGuidance {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        Ok(match request.kind {
            RequestKind::Residual => {
                let truth = self.ground_truth(&request.camera, request.background);
                GuidanceResponse::Residual(oracle_residual(&request.image, &truth))
            }
            RequestKind::Refine => {
                let truth = self.refine_target(&request.camera, &request.image);
                let blend = self.blend.unwrap_or(request.timestep);
                if !(0.0..=1.0).contains(&blend) {
                    return Err(GuidanceError::InvalidRequest(format!("blend {blend} outside [0, 1]")));
                }
                GuidanceResponse::Refined(oracle_refine(&request.image, &truth, blend))
            }
        })
    }
}

/// Zero residual and identity refinement.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroGuidance;

impl Guidance for ZeroGuidance {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        Ok(match request.kind {
            RequestKind::Residual => {
                GuidanceResponse::Residual(SignedImage::zeros(request.image.width, request.image.height))
            }
            RequestKind::Refine => GuidanceResponse::Refined(request.image.clone()),
        })
    }
}

impl<G: Guidance + ?Sized> Guidance for &G {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        (**self).guide(request)
    }
}

impl<G: Guidance + ?Sized> Guidance for Box<G> {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        (**self).guide(request)
    }
}
