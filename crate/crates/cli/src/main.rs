use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use cysto_core::annotations::{
    Appearance, CocoDocument, ExclusionReason, FrameSpan, LesionDraft, StatsLevel,
};
use cysto_core::catalog::{
    query_index, write_index, AssetKind, DocumentKind, DocumentRef, IndexFilter, IngestWarning, LabelSubmission,
    Procedure, Site, VideoMeta,
};
use cysto_core::export::FairStatus;
use cysto_core::qc::{ConsensusOutcome, QcLayer, ReviewVote, ReviewerRole, Verdict, VoteOutcome};
use cysto_core::quality::{score_image, GrayImage};
use cysto_core::vocab::{CompletionStatus, PathologyCode, Uid};
use cysto_core::workspace::{Settings, Workspace};
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(name = "cysto", version, about = "Curate cystoscopy images and videos into a FAIR dataset")]
struct Cli {
    /// Workspace directory
    #[arg(short, long, env = "CYSTO_WORKSPACE", default_value = ".", global = true)]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty workspace
    Init(InitArgs),
    #[command(subcommand)]
    /// Register and list patients
    Patient(PatientCmd),
    #[command(subcommand)]
    /// Register and list cases
    Case(CaseCmd),
    /// Catalog a media file, or every media file under a directory
    Ingest {
        path: PathBuf,
        #[arg(long = "case")]
        case_id: String,
        /// Accept images whose names do not follow the label grammar
        #[arg(long)]
        allow_unlabeled: bool,
    },
    /// Write the catalog index CSV
    Index {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print index rows matching every given filter
    Query(QueryArgs),
    /// Move an asset to a new completion status
    Status { asset: String, state: CompletionStatus },
    /// Label an image that was ingested without a conforming name
    Label {
        asset: String,
        #[arg(long)]
        modality: String,
        #[arg(long)]
        location: String,
        #[arg(long)]
        pathology: String,
        #[arg(long, default_value_t = 1)]
        sequence: u8,
    },
    /// Record the frame geometry of a video
    Meta {
        asset: String,
        #[arg(long)]
        frames: u64,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
    },
    /// Tombstone an asset
    Delete { asset: String },
    #[command(subcommand)]
    /// Quality scoring and layered QC
    Qc(QcCmd),
    #[command(subcommand)]
    /// Lesion records
    Lesion(LesionCmd),
    #[command(subcommand)]
    /// Frame annotations and COCO interchange
    Annot(AnnotCmd),
    #[command(subcommand)]
    /// Review panel votes
    Review(ReviewCmd),
    #[command(subcommand)]
    /// De-identified releases
    Export(ExportCmd),
    #[command(subcommand)]
    /// FAIR principle audit
    Fair(FairCmd),
    /// Serve the HTTP API
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, default_value = "")]
    license: String,
    /// Location vocabulary CSV (code,display_name)
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Urologists on the review panel
    #[arg(long, default_value_t = 4)]
    panel: usize,
    #[arg(long, default_value_t = 0)]
    qc3_seed: u64,
}

#[derive(Debug, Subcommand)]
enum PatientCmd {
    /// Register a patient; prints the new UID
    Add {
        #[arg(long)]
        site: Site,
        #[arg(long)]
        enrolled: NaiveDate,
    },
    /// List patients
    List,
}

#[derive(Debug, Subcommand)]
enum CaseCmd {
    /// Register a case; prints the new case ID
    Add {
        #[arg(long)]
        uid: Uid,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        procedure: Procedure,
        /// KIND=FILE, copied into the workspace (repeatable)
        #[arg(long = "doc")]
        docs: Vec<String>,
    },
    /// List cases
    List,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    status: Option<String>,
    #[arg(long)]
    pathology: Option<String>,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    location: Option<String>,
    #[arg(long)]
    uid: Option<String>,
}

#[derive(Debug, Subcommand)]
enum QcCmd {
    /// Score an image file or a stored image asset
    ScoreImage { target: String },
    /// Score a video from a directory of its extracted frames
    ScoreVideo {
        frames: PathBuf,
        #[arg(long)]
        asset: String,
        /// Score every Nth frame
        #[arg(long, default_value_t = 1)]
        fps_sample: usize,
    },
    /// Run QC layers for a case
    Run {
        #[arg(long = "case")]
        case_id: String,
        #[arg(long, default_value = "all", value_parser = parse_layer)]
        layer: LayerChoice,
    },
    /// Print the stored QC report of a case
    Show {
        #[arg(long = "case")]
        case_id: String,
    },
}

#[derive(Debug, Clone, Copy)]
enum LayerChoice {
    One(QcLayer),
    All,
}

fn parse_layer(s: &str) -> Result<LayerChoice, String> {
    match s {
        "all" => Ok(LayerChoice::All),
        n => n
            .parse::<u8>()
            .ok()
            .and_then(QcLayer::from_number)
            .map(LayerChoice::One)
            .ok_or_else(|| format!("layer must be 1, 2, 3 or all, not {n:?}")),
    }
}

/// Parses a SCREAMING_SNAKE token through the type's serde form.
fn parse_token<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase())).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
enum LesionCmd {
    /// Record a lesion; prints its ID
    Add {
        #[arg(long = "case")]
        case_id: String,
        #[arg(long)]
        location: Option<String>,
        #[arg(long)]
        appearance: Option<Appearance>,
        #[arg(long)]
        pathology: Option<PathologyCode>,
        /// Asset showing the lesion (repeatable)
        #[arg(long = "asset")]
        assets: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
enum AnnotCmd {
    /// Add segmentations from a COCO file to existing lesions
    ImportCoco { file: PathBuf },
    /// Classify a frame span of a video as showing a lesion
    Classify {
        #[arg(long)]
        lesion: String,
        #[arg(long)]
        video: String,
        #[arg(long)]
        start: u64,
        #[arg(long)]
        end: u64,
    },
    /// Exclude a frame span from annotation
    Exclude {
        #[arg(long)]
        video: String,
        #[arg(long)]
        start: u64,
        #[arg(long)]
        end: u64,
        #[arg(long, value_parser = parse_token::<ExclusionReason>)]
        reason: ExclusionReason,
    },
    ExportCoco {
        #[arg(long = "case")]
        case_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cohort statistics as CSV
    Stats {
        #[arg(long)]
        level: StatsLevel,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Case IDs, one per line; cases with lesions when omitted
        #[arg(long)]
        cases: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ReviewCmd {
    /// Cast a vote on an annotation
    Vote {
        #[arg(long)]
        item: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long, value_parser = parse_token::<ReviewerRole>)]
        role: ReviewerRole,
        #[arg(long, value_parser = parse_token::<Verdict>)]
        verdict: Verdict,
    },
    /// Close an item on the votes so far
    Escalate {
        #[arg(long)]
        item: String,
    },
    /// Record the external expert's ruling on an escalated item
    Resolve {
        #[arg(long)]
        item: String,
        #[arg(long, value_parser = parse_token::<ConsensusOutcome>)]
        outcome: ConsensusOutcome,
    },
}

#[derive(Debug, Subcommand)]
enum ExportCmd {
    /// Write a de-identified research bundle
    Research {
        /// Case IDs, one per line
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the public atlas of released images
    Atlas {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum FairCmd {
    /// Check the workspace against the 15 FAIR principles
    Audit {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn media_kind(path: &Path) -> Option<AssetKind> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" | "jpg" | "jpeg" | "bmp" | "tif" | "tiff" => Some(AssetKind::Image),
        "mp4" | "avi" | "mov" | "mkv" | "mpg" | "mpeg" => Some(AssetKind::Video),
        _ => None,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.workspace;
    if let Command::Init(args) = &cli.command {
        let settings = Settings {
            license: args.license.clone(),
            locations_file: args.locations.clone(),
            urologist_panel: args.panel,
            qc3_seed: args.qc3_seed,
            ..Settings::default()
        };
        Workspace::init(&root, settings)?;
        println!("initialized {}", root.display());
        return Ok(());
    }
    if let Command::Serve { config, bind } = cli.command {
        let mut config = cysto_server::ServiceConfig::load(&config)?;
        if let Some(b) = bind {
            config.bind = b;
        }
        eprintln!("serving {} on http://{}", config.workspace.display(), config.bind);
        let rt = tokio::runtime::Runtime::new()?;
        return Ok(rt.block_on(cysto_server::serve(config))?);
    }

    let mut ws = Workspace::open(&root)?;
    let now = Utc::now();
    match cli.command {
        Command::Init(_) | Command::Serve { .. } => unreachable!("handled above"),
        Command::Patient(PatientCmd::Add { site, enrolled }) => {
            let p = ws.catalog.register_patient(site, enrolled);
            println!("{}", p.uid);
        }
        Command::Patient(PatientCmd::List) => {
            for p in ws.catalog.patients() {
                println!("{}\t{}\t{}", p.uid, p.source_site, p.enrollment_date);
            }
            return Ok(());
        }
        Command::Case(CaseCmd::Add {
            uid,
            date,
            procedure,
            docs,
        }) => {
            let mut parsed = Vec::new();
            for d in &docs {
                let (kind, file) = d.split_once('=').context("--doc takes KIND=FILE")?;
                let kind: DocumentKind = kind.parse().map_err(anyhow::Error::msg)?;
                let file = PathBuf::from(file);
                let name = file.file_name().and_then(|n| n.to_str()).context("document needs a file name")?;
                parsed.push((kind, file.clone(), name.to_string()));
            }
            let case_id = ws.catalog.create_case(&uid, date, procedure, Vec::new())?.case_id.clone();
            for (kind, file, name) in parsed {
                let doc = DocumentRef {
                    kind,
                    reference: format!("{case_id}/{name}"),
                };
                let dest = ws.document_path(&doc);
                fs::create_dir_all(dest.parent().expect("docs dir"))?;
                fs::copy(&file, &dest).with_context(|| format!("copying {}", file.display()))?;
                ws.catalog.add_document(&case_id, doc)?;
            }
            println!("{case_id}");
        }
        Command::Case(CaseCmd::List) => {
            for c in ws.catalog.cases() {
                println!("{}\t{}\t{}\t{}", c.case_id, c.uid, c.case_date, c.procedure);
            }
            return Ok(());
        }
        Command::Ingest {
            path,
            case_id,
            allow_unlabeled,
        } => {
            let files: Vec<PathBuf> = if path.is_dir() {
                walkdir::WalkDir::new(&path)
                    .sort_by_file_name()
                    .into_iter()
                    .filter_map(|e| e.ok())
                    .filter(|e| e.file_type().is_file() && media_kind(e.path()).is_some())
                    .map(|e| e.into_path())
                    .collect()
            } else {
                vec![path.clone()]
            };
            let mut failed = 0;
            for file in &files {
                let Some(kind) = media_kind(file) else {
                    bail!("{}: not an image or video file", file.display());
                };
                match ws.ingest_file(file, &case_id, kind, allow_unlabeled) {
                    Ok(i) => match i.warning {
                        Some(IngestWarning::DuplicateChecksum { existing }) => {
                            println!("{}\tduplicate of {existing}", file.display())
                        }
                        None => println!("{}\t{}", i.asset.asset_id, file.display()),
                    },
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", file.display());
                    }
                }
            }
            ws.save()?;
            if failed > 0 {
                bail!("{failed} of {} files rejected", files.len());
            }
            return Ok(());
        }
        Command::Index { out } => {
            let mut bytes = Vec::new();
            write_index(&ws.catalog.build_index(), &mut bytes)?;
            fs::write(&out, bytes)?;
            println!("{} rows -> {}", ws.catalog.assets().count(), out.display());
            return Ok(());
        }
        Command::Query(q) => {
            let filter = IndexFilter {
                uid: q.uid,
                modality: q.modality,
                location: q.location,
                pathology: q.pathology,
                status: q.status,
                free_text: q.text,
            };
            let rows = ws.catalog.build_index();
            let hits: Vec<_> = query_index(&rows, &filter).into_iter().cloned().collect();
            write_index(&hits, std::io::stdout().lock())?;
            return Ok(());
        }
        Command::Status { asset, state } => {
            let gate = ws.qc.clone();
            let a = ws.catalog.set_status(&asset, state, &gate, "cli")?;
            println!("{}\t{}", a.asset_id, a.status);
        }
        Command::Label {
            asset,
            modality,
            location,
            pathology,
            sequence,
        } => {
            let case_id = ws.catalog.asset(&asset)?.case_id.clone();
            let case = ws.catalog.case(&case_id)?;
            let fields = LabelSubmission {
                uid: case.uid.to_string(),
                case_date: case.case_date,
                modality,
                location,
                pathology,
                sequence,
            };
            let a = ws.catalog.submit_label(&ws.vocab, &asset, &fields, "cli")?;
            println!("{}\t{}", a.asset_id, a.status);
        }
        Command::Meta {
            asset,
            frames,
            width,
            height,
        } => {
            let meta = VideoMeta {
                frame_count: frames,
                width,
                height,
            };
            ws.catalog.set_video_meta(&asset, meta)?;
        }
        Command::Delete { asset } => {
            ws.catalog.delete_asset(&asset, "cli")?;
            println!("{asset}\tdeleted");
        }
        Command::Qc(cmd) => qc(&mut ws, cmd, now)?,
        Command::Lesion(LesionCmd::Add {
            case_id,
            location,
            appearance,
            pathology,
            assets,
        }) => {
            ws.catalog.case(&case_id)?;
            for a in &assets {
                ws.catalog.asset(a)?;
            }
            let location = location.map(|l| ws.vocab.location(&l)).transpose()?;
            let lesion = ws.store.add_lesion(
                &case_id,
                LesionDraft {
                    location,
                    appearance,
                    pathology,
                    asset_ids: assets,
                },
            );
            ws.record("cli", "add_lesion", &lesion.lesion_id, serde_json::json!({ "case_id": case_id }));
            println!("{}", lesion.lesion_id);
        }
        Command::Annot(cmd) => annot(&mut ws, cmd)?,
        Command::Review(cmd) => review(&mut ws, cmd, now)?,
        Command::Export(ExportCmd::Research { cases, out }) => {
            let ids = read_id_list(&cases)?;
            let m = ws.export_research(&ids, &out, now)?;
            println!("{}\t{} cases -> {}", m.bundle_id, m.items.len(), out.display());
        }
        Command::Export(ExportCmd::Atlas { out }) => {
            let m = ws.export_atlas(&out, now)?;
            println!("{}\t{} images -> {}", m.bundle_id, m.items.len(), out.display());
        }
        Command::Fair(FairCmd::Audit { out }) => {
            let report = ws.fair_audit()?;
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            for e in &report.entries {
                println!("{}\t{:?}\t{}", e.principle, e.status, e.evidence);
            }
            println!(
                "{} pass, {} attested, {} fail, {} n/a",
                report.count(FairStatus::Pass),
                report.count(FairStatus::Attested),
                report.count(FairStatus::Fail),
                report.count(FairStatus::NotApplicable)
            );
            return Ok(());
        }
    }
    ws.save()?;
    Ok(())
}

fn qc(ws: &mut Workspace, cmd: QcCmd, now: chrono::DateTime<Utc>) -> Result<()> {
    match cmd {
        QcCmd::ScoreImage { target } => {
            let model = ws.model()?;
            let scores = if ws.catalog.asset(&target).is_ok() {
                ws.score_image_asset(&target, &model)?
            } else {
                let path = Path::new(&target);
                let scores = score_image(&GrayImage::open(path)?, &model, &ws.settings.gates)?;
                // a file already in the catalog keeps its scores
                let checksum = cysto_core::catalog::sha256_hex(&fs::read(path)?);
                let known: Vec<String> = ws
                    .catalog
                    .assets()
                    .filter(|a| a.checksum == checksum && !a.deleted)
                    .map(|a| a.asset_id.clone())
                    .collect();
                for id in known {
                    ws.scores.insert(id.clone(), scores);
                    ws.record("qc", "score_image", &id, serde_json::to_value(scores)?);
                }
                scores
            };
            print_json(&scores)?;
        }
        QcCmd::ScoreVideo {
            frames,
            asset,
            fps_sample,
        } => {
            if fps_sample == 0 {
                bail!("--fps-sample must be at least 1");
            }
            let model = ws.model()?;
            print_json(&ws.score_video_frames(&asset, &frames, fps_sample, &model)?)?;
        }
        QcCmd::Run { case_id, layer } => {
            let layer = match layer {
                LayerChoice::One(l) => Some(l),
                LayerChoice::All => None,
            };
            let report = ws.run_qc(&case_id, layer, now)?;
            print_json(&report)?;
            eprintln!("release gate: {}", if report.gate_release() { "open" } else { "closed" });
        }
        QcCmd::Show { case_id } => {
            ws.catalog.case(&case_id)?;
            match ws.qc.report(&case_id) {
                Some(r) => print_json(r)?,
                None => println!("no QC results for {case_id}"),
            }
            return Ok(());
        }
    }
    ws.save()?;
    Ok(())
}

fn video_meta(ws: &Workspace, video: &str) -> Result<VideoMeta> {
    let asset = ws.catalog.asset(video)?;
    asset
        .video
        .with_context(|| format!("frame geometry of {video} is unknown; run `cysto meta` or `qc score-video` first"))
}

fn annot(ws: &mut Workspace, cmd: AnnotCmd) -> Result<()> {
    match cmd {
        AnnotCmd::ImportCoco { file } => {
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let ids = ws.import_coco(&CocoDocument::from_json(&text)?, "cli")?;
            println!("{} segmentations imported", ids.len());
        }
        AnnotCmd::Classify {
            lesion,
            video,
            start,
            end,
        } => {
            let meta = video_meta(ws, &video)?;
            let a = ws.store.add_classification(&lesion, FrameSpan::new(video, start, end), &meta)?;
            let id = a.annotation_id.clone();
            ws.record("cli", "classify", &id, serde_json::json!({ "lesion_id": lesion }));
            println!("{id}");
        }
        AnnotCmd::Exclude {
            video,
            start,
            end,
            reason,
        } => {
            let meta = video_meta(ws, &video)?;
            let mark = ws.store.mark_excluded(FrameSpan::new(video, start, end), reason, &meta)?;
            let id = mark.mark_id.clone();
            ws.record("cli", "exclude", &id, serde_json::json!({ "reason": reason }));
            println!("{id}");
        }
        AnnotCmd::ExportCoco { case_id, out } => {
            let doc = ws.export_coco(&case_id)?;
            fs::write(&out, doc.to_json_pretty())?;
            println!("{} annotations -> {}", doc.annotations.len(), out.display());
            return Ok(());
        }
        AnnotCmd::Stats { level, out, cases } => {
            let ids = cases.as_deref().map(read_id_list).transpose()?;
            let report = ws.stats(level, ids.as_deref())?;
            match out {
                Some(path) => {
                    let mut file = fs::File::create(&path)?;
                    report.write_csv(&mut file)?;
                }
                None => report.write_csv(std::io::stdout().lock())?,
            }
            return Ok(());
        }
    }
    ws.save()?;
    Ok(())
}

fn review(ws: &mut Workspace, cmd: ReviewCmd, now: chrono::DateTime<Utc>) -> Result<()> {
    let panel = ws.settings.urologist_panel;
    let decision = match cmd {
        ReviewCmd::Vote {
            item,
            reviewer,
            role,
            verdict,
        } => {
            ws.store.annotation(&item)?;
            let vote = ReviewVote {
                reviewer_id: reviewer.clone(),
                role,
                verdict,
                cast_at: now,
            };
            let outcome = ws.reviews.cast(&item, vote, panel)?;
            ws.record(&reviewer, "vote", &item, serde_json::json!({ "role": role, "verdict": verdict }));
            match outcome {
                VoteOutcome::Pending { votes } => {
                    println!("{item}\tpending ({votes} votes)");
                    None
                }
                VoteOutcome::Decided(d) => Some(d),
            }
        }
        ReviewCmd::Escalate { item } => {
            ws.store.annotation(&item)?;
            Some(ws.reviews.escalate(&item, panel)?)
        }
        ReviewCmd::Resolve { item, outcome } => Some(ws.reviews.resolve_external(&item, outcome)?.clone()),
    };
    if let Some(d) = decision {
        ws.store.set_review(&d.item_id, d.outcome.review_state())?;
        ws.record("cli", "review_decided", &d.item_id, serde_json::json!({ "outcome": d.outcome }));
        println!("{}\t{:?}\t{:?}", d.item_id, d.outcome, d.decided_by);
    }
    ws.save()?;
    Ok(())
}
