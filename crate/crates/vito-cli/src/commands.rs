//! One function per subcommand.

use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use vito::initfit::{extract_boundary, inverse_emittance, light_bootstrap};
use vito::io::{
    assemble_cameras, load_run_config, load_run_config_file, parse_colmap_cameras,
    parse_colmap_images, read_emissive_grid, read_medium_grid, write_image_pfm, write_image_png,
    write_medium_grid, Condition, LoadedConfig,
};
use vito::math::{vec3, Aabb};
use vito::optimize::{
    mse_loss, psnr, run_reconstruction, ssim, write_loss_csv, InitMode, IterationLog,
};
use vito::phantom::{make_phantom, make_views, PhantomKind};
use vito::rerender::{
    invert_encoded, lookup_water, parse_water_table, scenario_brightfield, scenario_darkfield,
    scenario_immerse, scenario_inverse_darkfield, scenario_slice,
};
use vito::rng::PassKey;
use vito::sensor::Camera;
use vito::transport::{
    render_absorption_only, render_emissive, render_volpath, Image, Scene,
};
use vito::volume::MediumGrid;

use crate::scene::{
    backlight, padded_boundary, pick_view, read_image_auto, read_image_dir, read_view_image,
    rgb, ring_scene, view_stem, write_image_auto,
};
use crate::{
    ImmerseArgs, InitArgs, MetricsArgs, PhantomGenArgs, ReconstructArgs, RelightArgs, RenderArgs,
    SliceArgs,
};

fn load_medium(path: &Path) -> Result<MediumGrid> {
    read_medium_grid(path).with_context(|| format!("volume {}", path.display()))
}

fn load_emissive(path: &Path) -> Result<vito::volume::EmissiveGrid> {
    read_emissive_grid(path).with_context(|| format!("volume {}", path.display()))
}

pub fn phantom_gen(args: PhantomGenArgs) -> Result<()> {
    let kind: PhantomKind = args.kind.parse()?;
    let dims = [args.dims[0], args.dims[1], args.dims[2]];
    let he = vec3(
        args.extent[0] / 2.0,
        args.extent[1] / 2.0,
        args.extent[2] / 2.0,
    );
    let bounds = Aabb::new(he * -1.0, he);
    let grid = make_phantom(kind, dims, bounds)?;
    write_medium_grid(&args.out, &grid)?;
    println!(
        "phantom {} {}x{}x{} extent {}x{}x{} -> {}",
        args.kind,
        dims[0],
        dims[1],
        dims[2],
        args.extent[0],
        args.extent[1],
        args.extent[2],
        args.out.display()
    );
    Ok(())
}

pub fn render(args: RenderArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let selected = |i: usize| args.view.is_none() || args.view == Some(i as u32);
    let save = |i: usize, img: &Image| -> Result<()> {
        let stem = view_stem(i);
        let pfm = args.out.join(format!("{stem}.pfm"));
        write_image_pfm(&pfm, img)?;
        if args.png {
            write_image_png(args.out.join(format!("{stem}.png")), img)?;
        }
        println!("view {i} -> {}", pfm.display());
        Ok(())
    };

    if args.emissive {
        let em = load_emissive(&args.volume)?;
        let cameras = make_views(
            em.bounds().center(),
            args.ring.views,
            args.ring.radius,
            args.ring.elevation,
            args.ring.width,
            args.ring.height,
            args.ring.focal,
        )?;
        for (i, cam) in cameras.iter().enumerate().filter(|(i, _)| selected(*i)) {
            let img = render_emissive(&em, cam, args.steps)?;
            save(i, &img)?;
        }
        return Ok(());
    }

    let medium = load_medium(&args.volume)?;
    let (scene, cameras) = ring_scene(medium, &args.ring, &args.light, &args.scene)?;
    for (i, cam) in cameras.iter().enumerate().filter(|(i, _)| selected(*i)) {
        let img = if args.absorption_only {
            render_absorption_only(&scene, cam)?
        } else {
            render_volpath(
                &scene,
                cam,
                args.spp,
                PassKey {
                    pass: 0,
                    view: i as u32,
                },
            )?
        };
        save(i, &img)?;
    }
    Ok(())
}

/// References in ring order, or by COLMAP image name when the config names a
/// pose export.
fn gather_references(
    lc: &LoadedConfig,
    refs_dir: &Path,
    medium: &MediumGrid,
) -> Result<Vec<(Camera, Image)>> {
    let mut out = Vec::new();
    if let Some(cm) = &lc.colmap {
        let cams_txt = std::fs::read_to_string(&cm.cameras)
            .with_context(|| format!("reading {}", cm.cameras.display()))?;
        let imgs_txt = std::fs::read_to_string(&cm.images)
            .with_context(|| format!("reading {}", cm.images.display()))?;
        let cams = parse_colmap_cameras(&cams_txt)?;
        let imgs = parse_colmap_images(&imgs_txt)?;
        for (name, camera) in assemble_cameras(&cams, &imgs, cm.crop)? {
            let img = read_image_auto(&refs_dir.join(&name))
                .with_context(|| format!("reference {name}"))?;
            out.push((camera, img));
        }
    } else {
        let cameras = make_views(
            medium.bounds().center(),
            lc.views.count,
            lc.views.radius,
            lc.views.elevation,
            lc.views.width,
            lc.views.height,
            lc.views.focal,
        )?;
        for (i, camera) in cameras.into_iter().enumerate() {
            let img = read_view_image(refs_dir, &view_stem(i))?;
            out.push((camera, img));
        }
    }
    Ok(out)
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let mut lc = match &args.config {
        Some(p) => load_run_config_file(p).with_context(|| format!("config {}", p.display()))?,
        None => load_run_config("")?,
    };
    if let Some(cond) = &args.condition {
        let c: Condition = cond.parse()?;
        lc.condition = c;
        lc.run.optimize_light = c.optimize_light();
        lc.run.init_mode = c.init_mode();
    }
    if let Some(seed) = args.seed {
        lc.run.seed = seed;
    }

    // Initial medium: an emissive-field conversion, or a cold grid of the
    // configured shape. The conversion needs the light estimate, and the
    // bootstrap needs the references, so images are loaded first against a
    // placeholder grid where required.
    let refs_dir = &args.refs;
    let medium = match lc.run.init_mode {
        InitMode::Emissive => {
            let path = args
                .emissive
                .as_ref()
                .context("condition MO+LO+INIT needs --emissive")?;
            let em = load_emissive(path)?;
            // Bootstrap from whatever images the directory holds.
            let all = read_image_dir(refs_dir)?;
            let images: Vec<Image> = all.into_iter().map(|(_, i)| i).collect();
            let light = light_bootstrap(&images)?;
            println!(
                "bootstrap light {:.6} {:.6} {:.6}",
                light.r, light.g, light.b
            );
            inverse_emittance(&em, light)?
        }
        InitMode::Cold => {
            let e = lc.grid.extent;
            let he = vec3(e[0] / 2.0, e[1] / 2.0, e[2] / 2.0);
            MediumGrid::new(lc.grid.dims, Aabb::new(he * -1.0, he))?
        }
    };

    let references = gather_references(&lc, refs_dir, &medium)?;
    let images: Vec<Image> = references.iter().map(|(_, i)| i.clone()).collect();
    let light_rgb = if lc.run.init_mode == InitMode::Emissive || lc.light.bootstrap {
        light_bootstrap(&images)?
    } else {
        rgb(lc.light.radiance)
    };

    let center = medium.bounds().center();
    let boundary = padded_boundary(medium.bounds(), lc.grid.padding);
    let source = backlight(center, light_rgb, lc.light.distance, lc.light.half_size)?;
    let mut scene = Scene::new(medium, boundary, source);
    scene.orbit_light = lc.views.orbit_light;
    scene.validate()?;

    if let Some(dir) = &args.dump_iters {
        std::fs::create_dir_all(dir)?;
    }
    println!(
        "reconstructing: {} views, {} iterations, {} spp, condition {}",
        references.len(),
        lc.run.iterations,
        lc.run.spp,
        lc.condition.label()
    );
    let dump_dir = args.dump_iters.clone();
    let show_light = lc.run.optimize_light;
    let mut observer = |log: &IterationLog, s: &Scene| {
        let light_col = if show_light {
            let l = s.light.radiance;
            format!("  light {:.5} {:.5} {:.5}", l.r, l.g, l.b)
        } else {
            String::new()
        };
        println!(
            "iter {:3}  lr {:.3e}  loss {:10.4}  psnr {:6.2} dB  {:6.2}s{light_col}",
            log.iteration, log.lr, log.loss, log.psnr, log.seconds
        );
        let _ = std::io::stdout().flush();
        if let Some(dir) = &dump_dir {
            let path = dir.join(format!("iter_{:03}.vito", log.iteration));
            if let Err(e) = write_medium_grid(&path, &s.medium) {
                eprintln!("warning: dump {} failed: {e}", path.display());
            }
        }
    };
    let (grid, light, logs) =
        run_reconstruction(scene, &references, &lc.run, Some(&mut observer))?;

    write_medium_grid(&args.out, &grid)?;
    if let Some(path) = &args.log {
        let mut f = std::fs::File::create(path)?;
        write_loss_csv(&logs, &mut f)?;
    }
    let last = logs.last().expect("at least one iteration");
    println!("light {:.6} {:.6} {:.6}", light.r, light.g, light.b);
    println!(
        "final loss {:.4} psnr {:.2} dB -> {}",
        last.loss,
        last.psnr,
        args.out.display()
    );
    Ok(())
}

pub fn init_from_emissive(args: InitArgs) -> Result<()> {
    let em = load_emissive(&args.emissive)?;
    let light = match (&args.light, &args.refs) {
        (Some(l), _) => rgb(*l),
        (None, Some(dir)) => {
            let images: Vec<Image> = read_image_dir(dir)?.into_iter().map(|(_, i)| i).collect();
            light_bootstrap(&images)?
        }
        (None, None) => bail!("either --light or --refs is required"),
    };
    let medium = inverse_emittance(&em, light)?;
    let boundary = extract_boundary(&em, args.threshold)?;
    write_medium_grid(&args.out, &medium)?;
    println!("light {:.6} {:.6} {:.6}", light.r, light.g, light.b);
    println!(
        "boundary {:.6} {:.6} {:.6}  {:.6} {:.6} {:.6}",
        boundary.min.x, boundary.min.y, boundary.min.z,
        boundary.max.x, boundary.max.y, boundary.max.z
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn relight(args: RelightArgs) -> Result<()> {
    let medium = load_medium(&args.volume)?;
    let (scene, cameras) = ring_scene(medium, &args.ring, &args.light, &args.scene)?;
    let cam = pick_view(&cameras, args.view)?;
    let (scenario, invert) = match args.mode.as_str() {
        "brightfield" => (scenario_brightfield(&scene), false),
        "darkfield" => (scenario_darkfield(&scene)?, false),
        "inverse-darkfield" => (scenario_inverse_darkfield(&scene)?, true),
        other => bail!("unknown mode '{other}' (brightfield, darkfield, inverse-darkfield)"),
    };
    let mut img = render_volpath(
        &scenario,
        cam,
        args.spp,
        PassKey {
            pass: 0,
            view: args.view,
        },
    )?;
    if invert {
        img = invert_encoded(&img);
    }
    write_image_auto(&args.out, &img)?;
    println!("{} view {} -> {}", args.mode, args.view, args.out.display());
    Ok(())
}

pub fn slice(args: SliceArgs) -> Result<()> {
    let medium = load_medium(&args.volume)?;
    let (scene, cameras) = ring_scene(medium, &args.ring, &args.light, &args.scene)?;
    let cam = pick_view(&cameras, args.view)?;
    let [nx, ny, nz, offset] = args.plane;
    let normal = vec3(nx, ny, nz).normalized();
    let sliced = scenario_slice(&scene, normal, offset)?;
    let img = render_volpath(
        &sliced,
        cam,
        args.spp,
        PassKey {
            pass: 0,
            view: args.view,
        },
    )?;
    write_image_auto(&args.out, &img)?;
    println!(
        "slice [{nx}, {ny}, {nz}] offset {offset} view {} -> {}",
        args.view,
        args.out.display()
    );
    Ok(())
}

pub fn immerse(args: ImmerseArgs) -> Result<()> {
    let medium = load_medium(&args.volume)?;
    let table_text = std::fs::read_to_string(&args.water_table)
        .with_context(|| format!("water table {}", args.water_table.display()))?;
    let table = parse_water_table(&table_text)?;
    let water = lookup_water(&table, &args.water)?;
    let (scene, cameras) = ring_scene(medium, &args.ring, &args.light, &args.scene)?;
    let cam = pick_view(&cameras, args.view)?;
    let immersed = scenario_immerse(&scene, water.medium()?);
    let img = render_volpath(
        &immersed,
        cam,
        args.spp,
        PassKey {
            pass: 0,
            view: args.view,
        },
    )?;
    write_image_auto(&args.out, &img)?;
    println!(
        "immersed in {} view {} -> {}",
        args.water,
        args.view,
        args.out.display()
    );
    Ok(())
}

fn image_stems(dir: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file()
            && matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pfm") | Some("png")
            )
        {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, p));
        }
    }
    out.sort();
    Ok(out)
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let pairs: Vec<(String, Image, Image)> = if args.rendered.is_dir() {
        if !args.reference.is_dir() {
            bail!("--rendered is a directory but --reference is not");
        }
        let rendered = image_stems(&args.rendered)?;
        let reference = image_stems(&args.reference)?;
        let ref_by_stem: std::collections::HashMap<_, _> = reference.iter().cloned().collect();
        if rendered.is_empty() {
            bail!("no images in {}", args.rendered.display());
        }
        let mut pairs = Vec::new();
        for (stem, path) in &rendered {
            let ref_path = ref_by_stem
                .get(stem)
                .with_context(|| format!("reference for {stem} is missing"))?;
            pairs.push((
                stem.clone(),
                read_image_auto(path)?,
                read_image_auto(ref_path)?,
            ));
        }
        pairs
    } else {
        if args.reference.is_dir() {
            bail!("--reference is a directory but --rendered is not");
        }
        let stem = args
            .rendered
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let a = read_image_auto(&args.rendered)?;
        let b = read_image_auto(&args.reference)?;
        vec![(stem, a, b)]
    };

    let mut csv = String::from("view,mse,psnr,ssim\n");
    let mut mses = Vec::new();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for (stem, rendered, reference) in &pairs {
        let mse = mse_loss(rendered, reference).with_context(|| format!("view {stem}"))?;
        let pv = if mse > 0.0 { psnr(mse)? } else { f64::INFINITY };
        let sv = ssim(rendered, reference).with_context(|| format!("view {stem}"))?;
        csv.push_str(&format!("{stem},{mse},{pv},{sv}\n"));
        mses.push(mse);
        psnrs.push(pv);
        ssims.push(sv);
    }
    let n = pairs.len() as f64;
    let mean_mse = mses.iter().sum::<f64>() / n;
    let mean_psnr = psnrs.iter().sum::<f64>() / n;
    let mean_ssim = ssims.iter().sum::<f64>() / n;
    let pooled_psnr = if mean_mse > 0.0 {
        psnr(mean_mse)?
    } else {
        f64::INFINITY
    };
    // Two aggregates on purpose: the mean of per-view PSNRs and the PSNR of
    // the pooled MSE answer different questions and can differ by dB.
    csv.push_str(&format!("mean,{mean_mse},{mean_psnr},{mean_ssim}\n"));
    csv.push_str(&format!("pooled,{mean_mse},{pooled_psnr},{mean_ssim}\n"));

    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
