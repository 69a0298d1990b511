//! Detector backend boundary and the external-process implementation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blob::BlobStore;
use crate::domain::{BlobId, BoundingBox, HazardClass};
use crate::fixtures::encode_png;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector process: {0}")]
    Io(#[from] std::io::Error),
    #[error("detector protocol: {0}")]
    Protocol(String),
    #[error("detector reported: {0}")]
    Backend(String),
    #[error("{0}")]
    Unsupported(&'static str),
    #[error("invalid feature stack: {0}")]
    InvalidFeatures(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_image_edge: u32,
    pub classes: Vec<HazardClass>,
    pub activations: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class: HazardClass,
    pub score: f64,
}

/// Image handed to a backend. `pixels` is set for derived images (LIME
/// perturbations); `image_ref` then names the source image.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub image_ref: &'a BlobId,
    pub width: u32,
    pub height: u32,
    pub pixels: Option<&'a RgbImage>,
}

/// `K` non-negative activation maps of `height` x `width` cells plus a
/// length-`K` weight vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureStack<T = f64> {
    height: usize,
    width: usize,
    channels: Vec<Vec<T>>,
    class_weights: BTreeMap<HazardClass, Vec<T>>,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn new(
        height: usize,
        width: usize,
        channels: Vec<Vec<T>>,
        class_weights: BTreeMap<HazardClass, Vec<T>>,
    ) -> Result<Self, DetectorError> {
        if channels.is_empty() {
            return Err(DetectorError::InvalidFeatures("need at least one channel"));
        }
        if height == 0 || width == 0 {
            return Err(DetectorError::InvalidFeatures("empty grid"));
        }
        for ch in &channels {
            if ch.len() != height * width {
                return Err(DetectorError::InvalidFeatures("channel size mismatch"));
            }
            if ch.iter().any(|v| !v.is_finite() || *v < T::zero()) {
                return Err(DetectorError::InvalidFeatures("activations must be finite and >= 0"));
            }
        }
        if class_weights
            .values()
            .any(|w| w.len() != channels.len() || w.iter().any(|v| !v.is_finite()))
        {
            return Err(DetectorError::InvalidFeatures("weight vector length must equal K"));
        }
        Ok(FeatureStack {
            height,
            width,
            channels,
            class_weights,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }
    pub fn weights(&self, class: HazardClass) -> Option<&[T]> {
        self.class_weights.get(&class).map(Vec::as_slice)
    }
    pub fn class_weights(&self) -> &BTreeMap<HazardClass, Vec<T>> {
        &self.class_weights
    }

    /// Same activations with every class weight vector multiplied by `c`.
    pub fn scale_weights(&self, c: T) -> Self {
        let mut out = self.clone();
        for w in out.class_weights.values_mut() {
            for v in w.iter_mut() {
                *v = *v * c;
            }
        }
        out
    }
}

/// Pluggable object detector. Instances serve one caller at a time.
pub trait DetectorBackend: Send {
    fn capabilities(&self) -> Capabilities;

    fn detect(&mut self, image: &ImageInput<'_>) -> Result<Vec<RawDetection>, DetectorError>;

    fn activations(&mut self, _image: &ImageInput<'_>) -> Result<Option<FeatureStack>, DetectorError> {
        Ok(None)
    }
}

/// Request line of the external detector protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_ref: BlobId,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub class: HazardClass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    #[serde(default)]
    pub detections: Vec<WireDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectResponse {
    pub fn into_detections(self) -> Result<Vec<RawDetection>, DetectorError> {
        if let Some(e) = self.error {
            return Err(DetectorError::Backend(e));
        }
        self.detections
            .into_iter()
            .map(|d| {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(DetectorError::Protocol(format!("score {} outside [0,1]", d.score)));
                }
                let bbox = BoundingBox::from_array(d.bbox)
                    .map_err(|e| DetectorError::Protocol(e.to_string()))?;
                Ok(RawDetection {
                    bbox,
                    class: d.class,
                    score: d.score,
                })
            })
            .collect()
    }
}

/// Child process speaking one JSON object per line on stdin/stdout.
pub struct ExternalProcessDetector {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    caps: Capabilities,
    blobs: Option<Arc<dyn BlobStore>>,
}

impl ExternalProcessDetector {
    pub fn spawn(command: &[String], caps: Capabilities) -> Result<Self, DetectorError> {
        let (program, args) = command
            .split_first()
            .ok_or(DetectorError::Unsupported("empty detector command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalProcessDetector {
            child,
            stdin,
            stdout,
            caps,
            blobs: None,
        })
    }

    /// Store used to publish derived images so the child can read them.
    pub fn with_blob_store(mut self, blobs: Arc<dyn BlobStore>) -> Self {
        self.blobs = Some(blobs);
        self
    }

    fn round_trip(&mut self, req: &DetectRequest) -> Result<DetectResponse, DetectorError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(DetectorError::Protocol("detector closed stdout".into()));
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| DetectorError::Protocol(e.to_string()))
    }
}

impl DetectorBackend for ExternalProcessDetector {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn detect(&mut self, image: &ImageInput<'_>) -> Result<Vec<RawDetection>, DetectorError> {
        let image_ref = match image.pixels {
            None => image.image_ref.clone(),
            Some(px) => {
                let blobs = self
                    .blobs
                    .as_ref()
                    .ok_or(DetectorError::Unsupported("derived images need a blob store"))?;
                blobs.put(&encode_png(px))?
            }
        };
        let req = DetectRequest {
            image_ref,
            width: image.width,
            height: image.height,
        };
        self.round_trip(&req)?.into_detections()
    }
}

impl Drop for ExternalProcessDetector {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Capabilities {
        Capabilities {
            max_image_edge: 4096,
            classes: HazardClass::ALL.to_vec(),
            activations: false,
        }
    }

    #[test]
    fn feature_stack_validation() {
        let w = BTreeMap::from([(HazardClass::Other, vec![1.0])]);
        assert!(FeatureStack::new(2, 2, vec![vec![0.0; 4]], w.clone()).is_ok());
        assert!(FeatureStack::new(2, 2, vec![vec![0.0; 3]], w.clone()).is_err());
        assert!(FeatureStack::new(2, 2, vec![vec![-1.0; 4]], w.clone()).is_err());
        assert!(FeatureStack::<f64>::new(2, 2, vec![], BTreeMap::new()).is_err());
        let bad_w = BTreeMap::from([(HazardClass::Other, vec![1.0, 2.0])]);
        assert!(FeatureStack::new(2, 2, vec![vec![0.0; 4]], bad_w).is_err());
    }

    #[test]
    fn wire_format() {
        let req = DetectRequest {
            image_ref: BlobId::new("ab"),
            width: 640,
            height: 480,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"image_ref":"ab","width":640,"height":480}"#
        );
        let resp: DetectResponse = serde_json::from_str(
            r#"{"detections":[{"box":[1,2,30,40],"class":"metal_can","score":0.75}]}"#,
        )
        .unwrap();
        let d = resp.into_detections().unwrap();
        assert_eq!(d[0].class, HazardClass::MetalCan);
        assert_eq!(d[0].bbox.to_array(), [1.0, 2.0, 30.0, 40.0]);
        let bad: DetectResponse =
            serde_json::from_str(r#"{"detections":[{"box":[1,2,30,40],"class":"other","score":1.5}]}"#)
                .unwrap();
        assert!(bad.into_detections().is_err());
    }

    #[test]
    fn external_process_round_trip() {
        let script = r#"while read line; do echo '{"detections":[{"box":[0,0,10,10],"class":"plastic_foil","score":0.9}]}'; done"#;
        let cmd = vec!["sh".to_string(), "-c".to_string(), script.to_string()];
        let mut det = ExternalProcessDetector::spawn(&cmd, caps()).unwrap();
        let r = BlobId::new("x");
        let input = ImageInput {
            image_ref: &r,
            width: 32,
            height: 32,
            pixels: None,
        };
        for _ in 0..3 {
            let out = det.detect(&input).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].class, HazardClass::PlasticFoil);
        }
        assert!(det.activations(&input).unwrap().is_none());
    }

    #[test]
    fn external_process_error_line() {
        let cmd = vec![
            "sh".to_string(),
            "-c".to_string(),
            r#"read line; echo '{"error":"model not loaded"}'"#.to_string(),
        ];
        let mut det = ExternalProcessDetector::spawn(&cmd, caps()).unwrap();
        let r = BlobId::new("x");
        let input = ImageInput {
            image_ref: &r,
            width: 1,
            height: 1,
            pixels: None,
        };
        assert!(matches!(det.detect(&input), Err(DetectorError::Backend(_))));
    }
}
