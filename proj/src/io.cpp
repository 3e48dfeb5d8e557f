#include "dbrt/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "array format assumes a little-endian host");

namespace dbrt::io {

namespace fs = std::filesystem;

namespace {

void append_bytes(std::vector<unsigned char>& buf, const void* p, size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  buf.insert(buf.end(), b, b + n);
}

uint32_t crc_of(const std::vector<unsigned char>& buf, size_t n) {
  return static_cast<uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), buf.data(), static_cast<uInt>(n)));
}

}  // namespace

void write_array(const fs::path& file, const double* row_major,
                 const std::vector<uint32_t>& dims) {
  uint64_t count = 1;
  for (uint32_t d : dims) count *= d;

  std::vector<unsigned char> buf;
  buf.reserve(16 + dims.size() * 4 + count * 8);
  append_bytes(buf, "DBRT", 4);
  const uint16_t version = kFormatVersion;
  append_bytes(buf, &version, 2);
  const uint8_t rank = static_cast<uint8_t>(dims.size());
  append_bytes(buf, &rank, 1);
  for (uint32_t d : dims) append_bytes(buf, &d, 4);
  append_bytes(buf, row_major, count * 8);
  const uint32_t crc = crc_of(buf, buf.size());
  append_bytes(buf, &crc, 4);

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for write: " + file.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw CorruptFileError("short write: " + file.string());
}

ArrayData read_array(const fs::path& file) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw MissingArtifactError("missing array file: " + file.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> buf(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw CorruptFileError("short read: " + file.string());

  if (buf.size() < 11 || std::memcmp(buf.data(), "DBRT", 4) != 0)
    throw CorruptFileError("bad magic: " + file.string());
  uint16_t version;
  std::memcpy(&version, buf.data() + 4, 2);
  if (version != kFormatVersion)
    throw VersionMismatchError("unsupported format version " +
                               std::to_string(version) + ": " + file.string());
  const uint8_t rank = buf[6];
  const size_t header = 7 + static_cast<size_t>(rank) * 4;
  if (buf.size() < header + 4)
    throw CorruptFileError("truncated header: " + file.string());

  ArrayData a;
  a.dims.resize(rank);
  uint64_t count = 1;
  for (uint8_t i = 0; i < rank; ++i) {
    std::memcpy(&a.dims[i], buf.data() + 7 + i * 4, 4);
    count *= a.dims[i];
  }
  if (buf.size() != header + count * 8 + 4)
    throw CorruptFileError("length mismatch: " + file.string());
  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (stored_crc != crc_of(buf, buf.size() - 4))
    throw CorruptFileError("checksum mismatch: " + file.string());

  a.values.resize(count);
  std::memcpy(a.values.data(), buf.data() + header, count * 8);
  return a;
}

void write_tensor(const fs::path& file, const TensorRef& t) {
  // TensorRef views column-major Eigen storage; the file is row-major.
  std::vector<double> rm(static_cast<size_t>(t.size()));
  for (Eigen::Index r = 0; r < t.rows; ++r)
    for (Eigen::Index c = 0; c < t.cols; ++c)
      rm[static_cast<size_t>(r * t.cols + c)] = t.data[c * t.rows + r];
  if (t.cols == 1) {
    write_array(file, rm.data(), {static_cast<uint32_t>(t.rows)});
  } else {
    write_array(file, rm.data(),
                {static_cast<uint32_t>(t.rows), static_cast<uint32_t>(t.cols)});
  }
}

void read_tensor(const fs::path& file, const TensorRef& t) {
  ArrayData a = read_array(file);
  const Eigen::Index rows =
      a.dims.empty() ? 0 : static_cast<Eigen::Index>(a.dims[0]);
  const Eigen::Index cols =
      a.dims.size() > 1 ? static_cast<Eigen::Index>(a.dims[1]) : 1;
  if (rows != t.rows || cols != t.cols)
    throw ShapeError("array shape mismatch for " + t.name + " in " +
                     file.string());
  for (Eigen::Index r = 0; r < t.rows; ++r)
    for (Eigen::Index c = 0; c < t.cols; ++c)
      t.data[c * t.rows + r] = a.values[static_cast<size_t>(r * t.cols + c)];
}

void save_json(const fs::path& file, const json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for write: " + file.string());
  out << j.dump(2) << "\n";
}

json load_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingArtifactError("missing file: " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorruptFileError("invalid JSON in " + file.string() + ": " + e.what());
  }
}

namespace {

json world_config_to_json(const world::WorldConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"d_app", c.d_app},
              {"zipf_s", c.zipf_s},
              {"vis_lo", c.vis_lo},
              {"vis_hi", c.vis_hi},
              {"min_ingredients", c.min_ingredients},
              {"max_ingredients", c.max_ingredients},
              {"n_actions", c.n_actions},
              {"regions", c.regions},
              {"d_region", c.d_region},
              {"noise_scale", c.noise_scale},
              {"subset_prob", c.subset_prob},
              {"style", c.style},
              {"prominence_boost", c.prominence_boost},
              {"dict_id_range", c.dict_id_range},
              {"unique_dict_sets", c.unique_dict_sets},
              {"train_recipes", c.train_recipes},
              {"val_recipes", c.val_recipes},
              {"test_recipes", c.test_recipes},
              {"image_multiplicity", c.image_multiplicity},
              {"holdout_fraction", c.holdout_fraction}};
}

world::WorldConfig world_config_from_json(const json& j) {
  world::WorldConfig c;
  c.vocab_size = j.at("vocab_size");
  c.d_app = j.at("d_app");
  c.zipf_s = j.at("zipf_s");
  c.vis_lo = j.at("vis_lo");
  c.vis_hi = j.at("vis_hi");
  c.min_ingredients = j.at("min_ingredients");
  c.max_ingredients = j.at("max_ingredients");
  c.n_actions = j.at("n_actions");
  c.regions = j.at("regions");
  c.d_region = j.at("d_region");
  c.noise_scale = j.at("noise_scale");
  c.subset_prob = j.at("subset_prob");
  c.style = j.at("style");
  c.prominence_boost = j.at("prominence_boost");
  c.dict_id_range = j.at("dict_id_range");
  c.unique_dict_sets = j.at("unique_dict_sets");
  c.train_recipes = j.at("train_recipes");
  c.val_recipes = j.at("val_recipes");
  c.test_recipes = j.at("test_recipes");
  c.image_multiplicity = j.at("image_multiplicity");
  c.holdout_fraction = j.at("holdout_fraction");
  return c;
}

void write_int_array(const fs::path& file, const std::vector<int>& v) {
  std::vector<double> d(v.begin(), v.end());
  write_array(file, d.data(), {static_cast<uint32_t>(d.size())});
}

std::vector<int> read_int_array(const fs::path& file) {
  ArrayData a = read_array(file);
  return std::vector<int>(a.values.begin(), a.values.end());
}

}  // namespace

void save_dataset(const fs::path& dir, const world::PairedDataset& ds) {
  fs::create_directories(dir / "arrays");
  json arrays = json::object();
  const auto arr = [&](const std::string& name) {
    arrays[name] = name + ".dbrt";
    return dir / "arrays" / (name + ".dbrt");
  };

  write_array(arr("vocab_popularity"), ds.vocab.popularity.data(),
              {static_cast<uint32_t>(ds.vocab.size)});
  write_tensor(arr("vocab_appearance"),
               tensor_ref("vocab_appearance",
                          const_cast<Mat&>(ds.vocab.appearance)));
  write_array(arr("vocab_base_visibility"), ds.vocab.base_visibility.data(),
              {static_cast<uint32_t>(ds.vocab.size)});

  std::vector<int> ing_flat, ing_off{0}, title_flat, title_off{0};
  std::vector<int> instr_act, instr_ing, instr_off{0};
  std::vector<double> prom_flat;
  std::vector<double> categories;
  for (const auto& r : ds.recipes) {
    for (int id : r.ingredient_ids) ing_flat.push_back(id);
    for (Eigen::Index i = 0; i < r.prominence.size(); ++i)
      prom_flat.push_back(r.prominence[i]);
    ing_off.push_back(static_cast<int>(ing_flat.size()));
    for (int t : r.title_tokens) title_flat.push_back(t);
    title_off.push_back(static_cast<int>(title_flat.size()));
    for (const auto& [a, g] : r.instruction_tokens) {
      instr_act.push_back(a);
      instr_ing.push_back(g);
    }
    instr_off.push_back(static_cast<int>(instr_act.size()));
    categories.push_back(static_cast<double>(r.category_id));
  }
  write_int_array(arr("recipe_ingredients"), ing_flat);
  write_int_array(arr("recipe_ingredient_offsets"), ing_off);
  write_array(arr("recipe_prominence"), prom_flat.data(),
              {static_cast<uint32_t>(prom_flat.size())});
  write_int_array(arr("recipe_title_tokens"), title_flat);
  write_int_array(arr("recipe_title_offsets"), title_off);
  write_int_array(arr("recipe_instruction_actions"), instr_act);
  write_int_array(arr("recipe_instruction_ingredients"), instr_ing);
  write_int_array(arr("recipe_instruction_offsets"), instr_off);
  write_array(arr("recipe_categories"), categories.data(),
              {static_cast<uint32_t>(categories.size())});

  const int n_img = static_cast<int>(ds.images.size());
  const int T = ds.config.regions;
  const int dr = ds.config.d_region;
  std::vector<double> regions(static_cast<size_t>(n_img) * T * dr);
  std::vector<int> img_recipe, mask_flat, mask_off{0};
  for (int i = 0; i < n_img; ++i) {
    const auto& img = ds.images[static_cast<size_t>(i)];
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < dr; ++c)
        regions[static_cast<size_t>((i * T + t) * dr + c)] =
            img.region_features(t, c);
    img_recipe.push_back(img.recipe_id);
    for (uint8_t m : img.visible_mask) mask_flat.push_back(m);
    mask_off.push_back(static_cast<int>(mask_flat.size()));
  }
  write_array(arr("image_regions"), regions.data(),
              {static_cast<uint32_t>(n_img), static_cast<uint32_t>(T),
               static_cast<uint32_t>(dr)});
  write_int_array(arr("image_recipe"), img_recipe);
  write_int_array(arr("image_visible_mask"), mask_flat);
  write_int_array(arr("image_visible_mask_offsets"), mask_off);
  write_int_array(arr("split_train"), ds.train_ids);
  write_int_array(arr("split_val"), ds.val_ids);
  write_int_array(arr("split_test"), ds.test_ids);

  json manifest;
  manifest["kind"] = "dataset";
  manifest["format_version"] = kFormatVersion;
  manifest["seed"] = ds.seed;
  manifest["world"] = world_config_to_json(ds.config);
  manifest["counts"] = {{"recipes", ds.recipes.size()},
                        {"images", ds.images.size()},
                        {"train", ds.train_ids.size()},
                        {"val", ds.val_ids.size()},
                        {"test", ds.test_ids.size()}};
  manifest["held_out_categories"] = ds.held_out_categories;
  manifest["arrays"] = arrays;
  save_json(dir / "manifest.json", manifest);
}

world::PairedDataset load_dataset(const fs::path& dir) {
  const json manifest = load_json(dir / "manifest.json");
  if (manifest.value("kind", "") != "dataset")
    throw CorruptFileError("not a dataset manifest: " +
                           (dir / "manifest.json").string());
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw VersionMismatchError("dataset format version mismatch in " +
                               dir.string());

  world::PairedDataset ds;
  ds.config = world_config_from_json(manifest.at("world"));
  ds.seed = manifest.at("seed").get<uint64_t>();
  ds.held_out_categories =
      manifest.at("held_out_categories").get<std::vector<int64_t>>();

  const auto arr = [&](const std::string& name) {
    const auto& arrays = manifest.at("arrays");
    if (!arrays.contains(name))
      throw MissingArtifactError("dataset manifest lacks array: " + name);
    return dir / "arrays" / arrays.at(name).get<std::string>();
  };

  auto pop = read_array(arr("vocab_popularity"));
  auto app = read_array(arr("vocab_appearance"));
  auto vis = read_array(arr("vocab_base_visibility"));
  ds.vocab.size = static_cast<int>(pop.dims[0]);
  ds.vocab.d_app = static_cast<int>(app.dims[1]);
  ds.vocab.popularity =
      Eigen::Map<Vec>(pop.values.data(), static_cast<Eigen::Index>(pop.values.size()));
  ds.vocab.appearance.resize(ds.vocab.size, ds.vocab.d_app);
  for (int r = 0; r < ds.vocab.size; ++r)
    for (int c = 0; c < ds.vocab.d_app; ++c)
      ds.vocab.appearance(r, c) =
          app.values[static_cast<size_t>(r * ds.vocab.d_app + c)];
  ds.vocab.base_visibility =
      Eigen::Map<Vec>(vis.values.data(), static_cast<Eigen::Index>(vis.values.size()));

  auto ing_flat = read_int_array(arr("recipe_ingredients"));
  auto ing_off = read_int_array(arr("recipe_ingredient_offsets"));
  auto prom = read_array(arr("recipe_prominence"));
  auto title_flat = read_int_array(arr("recipe_title_tokens"));
  auto title_off = read_int_array(arr("recipe_title_offsets"));
  auto instr_act = read_int_array(arr("recipe_instruction_actions"));
  auto instr_ing = read_int_array(arr("recipe_instruction_ingredients"));
  auto instr_off = read_int_array(arr("recipe_instruction_offsets"));
  auto cats = read_array(arr("recipe_categories"));

  const size_t n_rec = cats.values.size();
  ds.recipes.resize(n_rec);
  for (size_t i = 0; i < n_rec; ++i) {
    world::Recipe& r = ds.recipes[i];
    r.id = static_cast<int>(i);
    r.category_id = static_cast<int64_t>(cats.values[i]);
    const int a = ing_off[i], b = ing_off[i + 1];
    r.ingredient_ids.assign(ing_flat.begin() + a, ing_flat.begin() + b);
    r.prominence.resize(b - a);
    for (int k = a; k < b; ++k)
      r.prominence[k - a] = prom.values[static_cast<size_t>(k)];
    r.title_tokens.assign(title_flat.begin() + title_off[i],
                          title_flat.begin() + title_off[i + 1]);
    for (int k = instr_off[i]; k < instr_off[i + 1]; ++k)
      r.instruction_tokens.emplace_back(instr_act[static_cast<size_t>(k)],
                                        instr_ing[static_cast<size_t>(k)]);
  }

  auto regions = read_array(arr("image_regions"));
  auto img_recipe = read_int_array(arr("image_recipe"));
  auto mask_flat = read_int_array(arr("image_visible_mask"));
  auto mask_off = read_int_array(arr("image_visible_mask_offsets"));
  const int n_img = static_cast<int>(regions.dims[0]);
  const int T = static_cast<int>(regions.dims[1]);
  const int dr = static_cast<int>(regions.dims[2]);
  ds.images.resize(static_cast<size_t>(n_img));
  for (int i = 0; i < n_img; ++i) {
    world::FoodImage& img = ds.images[static_cast<size_t>(i)];
    img.id = i;
    img.recipe_id = img_recipe[static_cast<size_t>(i)];
    img.region_features.resize(T, dr);
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < dr; ++c)
        img.region_features(t, c) =
            regions.values[static_cast<size_t>((i * T + t) * dr + c)];
    img.pooled_feature = img.region_features.colwise().mean().transpose();
    for (int k = mask_off[i]; k < mask_off[i + 1]; ++k)
      img.visible_mask.push_back(
          static_cast<uint8_t>(mask_flat[static_cast<size_t>(k)]));
  }

  ds.train_ids = read_int_array(arr("split_train"));
  ds.val_ids = read_int_array(arr("split_val"));
  ds.test_ids = read_int_array(arr("split_test"));
  return ds;
}

void save_model(const fs::path& dir, Model& model, const json& config_echo,
                int stage, int epoch, train::Adam* adam) {
  fs::create_directories(dir / "arrays");
  json manifest;
  manifest["kind"] = "model";
  manifest["format_version"] = kFormatVersion;
  manifest["stage"] = stage;
  manifest["epoch"] = epoch;
  manifest["has_debias"] = model.has_debias;
  manifest["param_count"] = model.param_count();
  manifest["image"] = {{"d_region", model.image.d_region},
                       {"hidden", model.image.hidden},
                       {"d_joint", model.image.d_joint},
                       {"heads", model.image.heads}};
  manifest["recipe"] = {{"vocab_size", model.recipe.vocab_size},
                        {"n_actions", model.recipe.n_actions},
                        {"d_section", model.recipe.d_section},
                        {"d_joint", model.recipe.d_joint}};
  if (model.has_debias) {
    manifest["classifier"] = {{"k_labels", model.classifier.k_labels},
                              {"hidden", model.classifier.hidden},
                              {"heads", model.classifier.heads},
                              {"layers", model.classifier.layers}};
    manifest["dictionary"] = {{"ids", model.dict.ids},
                              {"freq", model.dict.freq}};
  }
  manifest["config"] = config_echo;

  json arrays = json::object();
  for (auto& t : model.refs()) {
    const std::string file = t.name + ".dbrt";
    write_tensor(dir / "arrays" / file, t);
    arrays[t.name] = file;
  }
  manifest["arrays"] = arrays;

  if (adam) {
    auto& m = adam->moment1();
    auto& v = adam->moment2();
    std::vector<double> mc, vc;
    for (const auto& x : m) mc.insert(mc.end(), x.data(), x.data() + x.size());
    for (const auto& x : v) vc.insert(vc.end(), x.data(), x.data() + x.size());
    write_array(dir / "arrays" / "optimizer.m.dbrt", mc.data(),
                {static_cast<uint32_t>(mc.size())});
    write_array(dir / "arrays" / "optimizer.v.dbrt", vc.data(),
                {static_cast<uint32_t>(vc.size())});
    manifest["optimizer"] = {{"steps", adam->steps_taken()},
                             {"m", "optimizer.m.dbrt"},
                             {"v", "optimizer.v.dbrt"}};
  }
  save_json(dir / "manifest.json", manifest);
}

LoadedModel load_model(const fs::path& dir) {
  const json manifest = load_json(dir / "manifest.json");
  if (manifest.value("kind", "") != "model")
    throw CorruptFileError("not a model manifest: " +
                           (dir / "manifest.json").string());
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw VersionMismatchError("model format version mismatch in " +
                               dir.string());

  LoadedModel out;
  out.stage = manifest.at("stage");
  out.epoch = manifest.at("epoch");
  out.config_echo = manifest.value("config", json::object());

  const auto& im = manifest.at("image");
  out.model.image = enc::ImageEncoderParams(im.at("d_region"), im.at("hidden"),
                                            im.at("d_joint"), im.at("heads"));
  const auto& rc = manifest.at("recipe");
  out.model.recipe = enc::RecipeEncoderParams(
      rc.at("vocab_size"), rc.at("n_actions"), rc.at("d_section"),
      rc.at("d_joint"));
  out.model.has_debias = manifest.at("has_debias");
  if (out.model.has_debias) {
    const auto& cl = manifest.at("classifier");
    out.model.classifier = debias::ClassifierParams(
        cl.at("k_labels"), cl.at("hidden"), cl.at("heads"), cl.at("layers"));
    out.model.dict.ids = manifest.at("dictionary").at("ids").get<std::vector<int>>();
    out.model.dict.freq =
        manifest.at("dictionary").at("freq").get<std::vector<int64_t>>();
    out.model.dict.embeddings.resize(
        static_cast<Eigen::Index>(out.model.dict.ids.size()),
        out.model.image.d_joint);
    out.model.dict.rebuild_index();
  }

  const auto& arrays = manifest.at("arrays");
  for (auto& t : out.model.refs()) {
    if (!arrays.contains(t.name))
      throw MissingArtifactError("model manifest lacks array: " + t.name);
    read_tensor(dir / "arrays" / arrays.at(t.name).get<std::string>(), t);
  }

  if (manifest.contains("optimizer")) {
    out.has_optimizer = true;
    const auto& opt = manifest.at("optimizer");
    out.adam_steps = opt.at("steps");
    out.adam_m = read_array(dir / "arrays" / opt.at("m").get<std::string>()).values;
    out.adam_v = read_array(dir / "arrays" / opt.at("v").get<std::string>()).values;
  }
  return out;
}

}  // namespace dbrt::io
