// Writes a 2D pair containing a NaN pixel plus a config that trains on it.

#include <filesystem>
#include <fstream>

#include "fmamba/data.hpp"
#include "fmamba/tensor_io.hpp"

int main(int argc, char** argv) {
  if (argc != 2) return 1;
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  fmamba::ImagePair p = fmamba::synth_pair(1, 2, 16);
  fmamba::Tensor a = p.a.clone();
  a.mutable_data()[5] = std::nan("");
  fmamba::save_fmt1((dir / "a.fmt1").string(), a);
  fmamba::save_fmt1((dir / "b.fmt1").string(), p.b);
  std::ofstream(dir / "manifest.tsv") << "p0\ta.fmt1\tb.fmt1\n";
  std::ofstream(dir / "nan.ini") << "model.stem_channels = 4\nmodel.latent_channels = 8\nmodel.dgcb_blocks = 1\n"
                                    "model.k_mamba = 1\nmodel.decoder_layers = 1\nmodel.mamba_expand = 1\n"
                                    "model.mamba_d_state = 2\nmodel.cmca_reduction = 2\ntrain.batch_size = 1\n"
                                    "train.steps = 2\ntrain.checkpoint_path = nan.ckpt\n"
                                    "data.source = manifest\ndata.manifest = manifest.tsv\n";
  return 0;
}
