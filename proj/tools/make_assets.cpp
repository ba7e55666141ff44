// Dumps the built-in template assets to disk: head mesh (obj + manifest) and
// the two replacement textures. The pipeline works without these — pass them
// via template_obj / template_manifest to pin a run to on-disk files.
// Usage: make_assets [out_dir]   (default: assets)

#include <cstdio>
#include <filesystem>

#include "mvanon/facemesh.hpp"
#include "mvanon/io.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path out_dir = argc > 1 ? argv[1] : "assets";
  try {
    mvanon::io::ensure_dir(out_dir);
    const mvanon::TemplateMesh mesh = mvanon::build_canonical_head();
    mesh.validate();
    mvanon::save_template(mesh, (out_dir / "head_template.obj").string(),
                          (out_dir / "head_template.json").string());
    mvanon::io::save_ppm(mvanon::build_face_texture(true),
                         out_dir / "texture_masked.ppm");
    mvanon::io::save_ppm(mvanon::build_face_texture(false),
                         out_dir / "texture_maskless.ppm");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("assets written to %s\n", out_dir.string().c_str());
  return 0;
}
