//! A small curated workspace: every case passes all QC layers, every
//! annotation is approved and every asset is released. One extra image is
//! deleted so the index carries a tombstone.

use chrono::{DateTime, Duration, NaiveDate, Utc};
use cysto_core::annotations::geometry::Point;
use cysto_core::annotations::{Appearance, ExclusionReason, FrameSpan, LesionDraft, ReviewState};
use cysto_core::catalog::{AssetKind, DocumentKind, DocumentRef, Procedure, Site, VideoMeta};
use cysto_core::vocab::{CompletionStatus, PathologyCode};
use cysto_core::workspace::{Settings, Workspace};
use tempfile::TempDir;

pub const PATHOLOGIES: [&str; 6] = ["BEN", "TA-LG", "TA-HG", "CIS", "T1-HG", "T2-HG"];
pub const LOCATIONS: [&str; 4] = ["DOME", "TRIG", "LLAT", "POST"];
pub const META: VideoMeta = VideoMeta {
    frame_count: 300,
    width: 64,
    height: 48,
};

pub struct Cohort {
    pub dir: TempDir,
    pub ws: Workspace,
    pub case_ids: Vec<String>,
    pub deleted_asset: String,
}

pub fn now() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-06-01T12:00:00Z").unwrap().into()
}

fn advance_all(ws: &mut Workspace, case_id: &str) {
    let ids: Vec<String> = ws.catalog.case_assets(case_id).filter(|a| !a.deleted).map(|a| a.asset_id.clone()).collect();
    for id in ids {
        loop {
            let status = ws.catalog.asset(&id).unwrap().status;
            let Some(next) = status.next() else { break };
            ws.catalog.set_status(&id, next, &ws.qc, "curator").unwrap();
            if next == CompletionStatus::Released {
                break;
            }
        }
    }
}

/// `cases` curated cases over roughly three patients per four cases.
pub fn cohort(cases: usize) -> Cohort {
    let dir = TempDir::new().unwrap();
    let settings = Settings {
        license: "CC BY-NC 4.0".into(),
        qc3_seed: 11,
        ..Settings::default()
    };
    let mut ws = Workspace::init(dir.path().join("ws"), settings).unwrap();
    let patients = (cases * 3 / 4).max(1);
    let base = NaiveDate::from_ymd_opt(2019, 2, 1).unwrap();
    let uids: Vec<_> = (0..patients)
        .map(|i| ws.catalog.register_patient(if i % 2 == 0 { Site::SiteA } else { Site::SiteB }, base).uid)
        .collect();
    let good = ws.settings.gates.evaluate(450.0, 25.0);

    let mut case_ids = Vec::new();
    let mut deleted_asset = String::new();
    for i in 0..cases {
        let uid = &uids[i % patients];
        let date = base + Duration::days(30 + 41 * i as i64);
        let procedure = if i % 2 == 0 { Procedure::Turbt } else { Procedure::ClinicCysto };
        let mut docs = vec![DocumentRef {
            kind: DocumentKind::PathologyReport,
            reference: format!("pathology/{i}.txt"),
        }];
        if procedure == Procedure::Turbt {
            docs.push(DocumentRef {
                kind: DocumentKind::SurgeryReport,
                reference: format!("surgery/{i}.txt"),
            });
        }
        for d in &docs {
            let path = ws.document_path(d);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(path, format!("report {i}")).unwrap();
        }
        let case = ws.catalog.create_case(uid, date, procedure, docs).unwrap();
        let stamp = date.format("%Y%m%d");
        let pathology = PATHOLOGIES[i % PATHOLOGIES.len()];
        let location = LOCATIONS[i % LOCATIONS.len()];
        let modality = if i % 3 == 0 { "BLC" } else { "WLC" };

        let image_name = format!("{uid}_{stamp}_{modality}_{location}_{pathology}_01.png");
        let image = ws
            .ingest_bytes(&image_name, format!("image {i}").as_bytes(), &case.case_id, AssetKind::Image, false)
            .unwrap()
            .asset;
        let video = ws
            .ingest_bytes(&format!("{uid}_{stamp}.mp4"), format!("video {i}").as_bytes(), &case.case_id, AssetKind::Video, false)
            .unwrap()
            .asset;
        ws.catalog.set_video_meta(&video.asset_id, META).unwrap();
        ws.scores.insert(image.asset_id.clone(), good);
        ws.scores.insert(video.asset_id.clone(), good);

        let lesion = ws.store.add_lesion(
            &case.case_id,
            LesionDraft {
                location: ws.vocab.location(location).ok(),
                appearance: Some([Appearance::Papillary, Appearance::Sessile, Appearance::Flat][i % 3]),
                pathology: Some(pathology.parse::<PathologyCode>().unwrap()),
                asset_ids: vec![video.asset_id.clone(), image.asset_id.clone()],
            },
        );
        let x = (i % 7) as f64;
        let ring = vec![
            Point::new(5.0 + x, 4.0),
            Point::new(30.0 + x, 6.5),
            Point::new(22.0 + x, 30.0),
            Point::new(8.0 + x, 25.25),
        ];
        for frame in 10..16 {
            ws.store.add_segmentation(&lesion.lesion_id, &video.asset_id, frame, ring.clone(), &META).unwrap();
        }
        ws.store
            .add_classification(&lesion.lesion_id, FrameSpan::new(video.asset_id.clone(), 20, 60), &META)
            .unwrap();
        if procedure == Procedure::Turbt {
            ws.store.mark_excluded(FrameSpan::new(video.asset_id.clone(), 250, 299), ExclusionReason::Turbt, &META).unwrap();
        }

        if i == 0 {
            let extra = ws
                .ingest_bytes(
                    &format!("{uid}_{stamp}_{modality}_{location}_{pathology}_02.png"),
                    b"blurry duplicate view",
                    &case.case_id,
                    AssetKind::Image,
                    false,
                )
                .unwrap()
                .asset;
            ws.catalog.delete_asset(&extra.asset_id, "curator").unwrap();
            deleted_asset = extra.asset_id;
        }

        let annotation_ids: Vec<String> = ws
            .store
            .case_annotations(&case.case_id)
            .iter()
            .map(|a| a.annotation_id().to_string())
            .collect();
        for id in annotation_ids {
            ws.store.set_review(&id, ReviewState::Approved).unwrap();
        }
        let report = ws.run_qc(&case.case_id, None, now()).unwrap();
        assert!(report.gate_release(), "fixture case {} fails QC: {report:?}", case.case_id);
        advance_all(&mut ws, &case.case_id);
        case_ids.push(case.case_id);
    }
    ws.save().unwrap();
    Cohort {
        dir,
        ws,
        case_ids,
        deleted_asset,
    }
}
