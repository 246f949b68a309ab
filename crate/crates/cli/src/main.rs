use clap::{Args, Parser, Subcommand, ValueEnum};
use geokonvex::appearance::AppearanceKind;
use geokonvex::constraints::Annotation;
use geokonvex::error::{Error, Result};
use geokonvex::evolution::{evolve, EvolutionConfig, Segmenter};
use geokonvex::geodesic::{jaccard, ClosedContour};
use geokonvex::io::{
    annotation_to_json, contour_svg, decode_image, encode_png, field_from_dump, load_image, parse_annotation,
    read_u_dump, write_u_dump, ContourFile, DumpHeader, RunStatus,
};
use geokonvex::metrics::{ModelFamily, ModelKind};
use geokonvex::raster::{Image, Mask};
use geokonvex::synthetic::{ellipse_scene, EllipseSceneConfig};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "geokonvex", version, about = "Convex closed geodesics for interactive image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an image from an annotation and write the contour JSON.
    Segment {
        image: PathBuf,
        annotation: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Output contour JSON (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write an SVG overlay of the contour.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Ground-truth mask image (non-zero inside) for a Jaccard score.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Solve the edge-driven distance map and dump it with a JSON header.
    Distance {
        image: PathBuf,
        annotation: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Solve the whole grid instead of stopping once the target is reached.
        #[arg(long)]
        full: bool,
    },
    /// Backtrack a dumped distance map into a closed contour.
    Backtrack {
        image: PathBuf,
        annotation: PathBuf,
        dump: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Write the synthetic ellipse scene: image, annotation and truth mask.
    Synth {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Rsf,
    Dubins,
    Em,
}

#[derive(Clone, Copy, ValueEnum)]
enum Appearance {
    Gmm,
    Pc,
}

#[derive(Args)]
struct ModelArgs {
    /// Curvature model family.
    #[arg(long, value_enum, default_value = "em")]
    model: Family,
    /// Impose the convexity constraint (default).
    #[arg(long, overrides_with = "no_convexity")]
    convexity: bool,
    /// Classical model without the convexity constraint.
    #[arg(long)]
    no_convexity: bool,
    /// Curvature weight β.
    #[arg(long)]
    beta: Option<f64>,
    /// Scale of the velocity exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the region term against the edge term.
    #[arg(long)]
    mu: Option<f64>,
    /// Number of orientation samples.
    #[arg(long)]
    ntheta: Option<usize>,
    /// Relaxation ε of the anisotropic metric.
    #[arg(long)]
    eps_relax: Option<f64>,
    /// Fejér quadrature points for the elastica models.
    #[arg(long)]
    quad_points: Option<usize>,
    /// Tube radius around the previous contour, pixels.
    #[arg(long)]
    tube_radius: Option<f64>,
    /// Maximum number of evolution iterations.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop after the edge-driven initial contour.
    #[arg(long)]
    edge_only: bool,
    /// Region appearance model.
    #[arg(long, value_enum)]
    appearance: Option<Appearance>,
    /// Mixture components per region for --appearance gmm.
    #[arg(long)]
    gmm_components: Option<usize>,
}

impl ModelArgs {
    fn config(&self) -> Result<EvolutionConfig> {
        let mut cfg = EvolutionConfig::default();
        let family = match self.model {
            Family::Rsf => ModelFamily::ReedsSheppForward,
            Family::Dubins => ModelFamily::Dubins,
            Family::Em => ModelFamily::EulerMumford,
        };
        cfg.model = ModelKind::new(family, !self.no_convexity);
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),*) => { $(if let Some(v) = self.$src { cfg.$($dst).+ = v; })* };
        }
        set!(beta => params.beta, eps_relax => params.eps_relax, quad_points => params.quad_points,
             alpha => alpha, mu => mu, ntheta => ntheta, tube_radius => tube_radius, max_iters => max_iters);
        cfg.edge_only = self.edge_only;
        let components = self.gmm_components.unwrap_or(geokonvex::appearance::DEFAULT_COMPONENTS);
        cfg.appearance = match self.appearance {
            Some(Appearance::Pc) => {
                if self.gmm_components.is_some() {
                    return Err(Error::Config("--gmm-components requires --appearance gmm".into()));
                }
                AppearanceKind::PiecewiseConstant
            }
            _ => AppearanceKind::Gmm { components },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_annotation(path: &Path) -> Result<Annotation> {
    parse_annotation(&fs::read_to_string(path)?)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn emit(contour: &ClosedContour, file: &ContourFile, image: &Image, output: Option<&Path>, svg: Option<&Path>) -> Result<()> {
    if let Some(p) = svg {
        fs::write(p, contour_svg(contour, image.width, image.height))?;
    }
    write_output(output, &file.to_json())
}

fn truth_mask(path: &Path) -> Result<Mask> {
    let img = load_image(path)?;
    let mut m = Mask::new(img.width, img.height);
    for (k, px) in img.data.chunks(img.channels).enumerate() {
        m.data[k] = px.iter().any(|v| *v > 0.0);
    }
    Ok(m)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Segment { image, annotation, model, output, svg, truth } => {
            let cfg = model.config()?;
            let img = load_image(&image)?;
            let ann = read_annotation(&annotation)?;
            let truth = truth.map(|p| truth_mask(&p)).transpose()?;
            let (contour, trace) = evolve(&img, &ann, &cfg)?;
            let mut file = ContourFile::new(&contour, &cfg, Some(RunStatus::from(&trace)));
            if let Some(t) = truth {
                file.diagnostics.jaccard = Some(jaccard(&contour.rasterize(img.width, img.height, 1.0), &t)?);
            }
            emit(&contour, &file, &img, output.as_deref(), svg.as_deref())
        }
        Command::Distance { image, annotation, model, output, full } => {
            let cfg = model.config()?;
            let img = load_image(&image)?;
            let ann = read_annotation(&annotation)?;
            let seg = Segmenter::new(&img, &ann, &cfg, None)?;
            let psi = seg.edge_velocity()?.values;
            let obstacles = seg.obstacles_with(None);
            let (field, _) = seg.distance(&psi, &obstacles, full)?;
            let target = (!full).then_some(seg.endpoints.p1);
            let header = DumpHeader::new(seg.spec, cfg.model, cfg.params, seg.endpoints.p0, target, &psi);
            let mut file = std::io::BufWriter::new(fs::File::create(&output)?);
            write_u_dump(&mut file, &header, &field.values)?;
            file.flush()?;
            Ok(())
        }
        Command::Backtrack { image, annotation, dump, model, output, svg } => {
            let cfg = model.config()?;
            let img = load_image(&image)?;
            let ann = read_annotation(&annotation)?;
            let seg = Segmenter::new(&img, &ann, &cfg, None)?;
            let (header, values) = read_u_dump(BufReader::new(fs::File::open(&dump)?))?;
            let psi = seg.edge_velocity()?.values;
            let expected = DumpHeader::new(seg.spec, cfg.model, cfg.params, seg.endpoints.p0, header.target, &psi);
            if header != expected {
                return Err(Error::Format(format!(
                    "dump header does not match this image, annotation and model: {} vs {}",
                    serde_json::to_string(&header).unwrap_or_default(),
                    serde_json::to_string(&expected).unwrap_or_default()
                )));
            }
            if header.target.is_some_and(|t| t != seg.endpoints.p1) {
                return Err(Error::Format("dump target differs from this annotation's end point".into()));
            }
            let field = field_from_dump(&header, values);
            let (contour, _) = seg.contour_from_field(&field, &seg.obstacles_with(None))?;
            let file = ContourFile::new(&contour, &cfg, None);
            emit(&contour, &file, &img, output.as_deref(), svg.as_deref())
        }
        Command::Synth { image, annotation, truth, seed, noise } => {
            let scene = ellipse_scene(&EllipseSceneConfig { seed, noise_sigma: noise, ..Default::default() })?;
            fs::write(&image, encode_png(&scene.image)?)?;
            fs::write(&annotation, annotation_to_json(&scene.annotation))?;
            if let Some(p) = truth {
                let data = scene.truth.data.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
                let mask = Image::new(scene.truth.width, scene.truth.height, 1, data)?;
                fs::write(p, encode_png(&mask)?)?;
            }
            // Round trip through the decoder so a written scene is always loadable.
            decode_image(&fs::read(&image)?).map(|_| ())
        }
    }
}

fn error_json(code: &str, message: &str, issues: serde_json::Value) -> String {
    serde_json::json!({ "error": { "code": code, "message": message, "issues": issues } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", &e.to_string(), serde_json::json!([])));
            return ExitCode::from(1);
        }
    };
    if let Some(n) = std::env::var("GEOKONVEX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let issues = match &e {
                Error::Validation(list) => serde_json::to_value(list).unwrap_or_default(),
                _ => serde_json::json!([]),
            };
            eprintln!("{}", error_json(&e.code(), &e.to_string(), issues));
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
