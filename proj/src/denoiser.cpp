#include "voxdiff/denoiser.hpp"

namespace voxdiff {

namespace {

int wrap_coord(int v, int extent) {
    int m = v % extent;
    return m < 0 ? m + extent : m;
}

} // namespace

void check_denoiser_input(const Denoiser& model, const DenoiserInput& in) {
    if (!in.x_t) throw ConfigError("denoiser input missing x_t");
    if (in.x_t->channels != model.num_classes())
        throw ConfigError("denoiser expects " + std::to_string(model.num_classes()) +
                          " x_t channels, got " + std::to_string(in.x_t->channels));
    if (model.condition_channels() == 0) {
        if (in.condition) throw ConfigError("unconditioned denoiser given a condition");
        return;
    }
    if (!in.condition) throw ConfigError("conditioned denoiser needs a condition");
    if (in.condition->channels != model.condition_channels())
        throw ConfigError("denoiser expects " + std::to_string(model.condition_channels()) +
                          " condition channels, got " + std::to_string(in.condition->channels));
    if (!(in.condition->dims == in.x_t->dims))
        throw ConfigError("condition dims " + to_string(in.condition->dims) +
                          " do not match x_t dims " + to_string(in.x_t->dims));
}

OracleDenoiser::OracleDenoiser(SemanticGrid truth, int condition_channels, bool wrap, float boost)
    : truth_(std::move(truth)), condition_channels_(condition_channels), wrap_(wrap),
      boost_(boost) {
    validate_grid(truth_);
    if (condition_channels_ < 0) throw ConfigError("negative condition channels");
}

Field OracleDenoiser::predict_x0_logits(const DenoiserInput& in) {
    check_denoiser_input(*this, in);
    const Dims3 td = truth_.dims;
    const Dims3 od = in.x_t->dims;
    if (!wrap_) {
        if (in.ox < 0 || in.oy < 0 || in.oz < 0 || in.ox + od.h > td.h || in.oy + od.w > td.w ||
            in.oz + od.d > td.d)
            throw ConfigError("oracle window " + to_string(od) + " at (" + std::to_string(in.ox) +
                              ", " + std::to_string(in.oy) + ", " + std::to_string(in.oz) +
                              ") leaves the scene " + to_string(td));
    }
    Field logits = new_field<float>(od, truth_.num_classes, 0.0f);
    for (int z = 0; z < od.d; ++z)
        for (int y = 0; y < od.w; ++y)
            for (int x = 0; x < od.h; ++x) {
                int sx = in.ox + x, sy = in.oy + y, sz = in.oz + z;
                if (wrap_) {
                    sx = wrap_coord(sx, td.h);
                    sy = wrap_coord(sy, td.w);
                    sz = wrap_coord(sz, td.d);
                }
                uint8_t label = truth_.at(sx, sy, sz);
                logits.row(x + int64_t(od.h) * (y + int64_t(od.w) * z))[label] = boost_;
            }
    return logits;
}

Tensor field_to_tensor(const Field& f) {
    Tensor t = Tensor::zeros(1, f.channels, f.dims.h, f.dims.w, f.dims.d);
    for (int64_t v = 0; v < f.voxels(); ++v) {
        const float* row = f.row(v);
        for (int c = 0; c < f.channels; ++c) t.v[size_t(t.plane(0, c) + v)] = row[c];
    }
    return t;
}

Field tensor_to_field(const Tensor& t, int batch_index) {
    if (batch_index < 0 || batch_index >= t.n)
        throw ConfigError("tensor batch index out of range");
    Field f = new_field<float>(Dims3{t.h, t.w, t.d}, t.c);
    for (int64_t v = 0; v < f.voxels(); ++v) {
        float* row = f.row(v);
        for (int c = 0; c < t.c; ++c) row[c] = t.v[size_t(t.plane(batch_index, c) + v)];
    }
    return f;
}

Tensor pack_input_tensor(const Field& x_t, const Field* condition) {
    int channels = x_t.channels + (condition ? condition->channels : 0);
    Tensor t = Tensor::zeros(1, channels, x_t.dims.h, x_t.dims.w, x_t.dims.d);
    for (int64_t v = 0; v < x_t.voxels(); ++v) {
        const float* row = x_t.row(v);
        for (int c = 0; c < x_t.channels; ++c) t.v[size_t(t.plane(0, c) + v)] = row[c];
    }
    if (condition) {
        for (int64_t v = 0; v < condition->voxels(); ++v) {
            const float* row = condition->row(v);
            for (int c = 0; c < condition->channels; ++c)
                t.v[size_t(t.plane(0, x_t.channels + c) + v)] = row[c];
        }
    }
    return t;
}

Field UNetDenoiser::predict_x0_logits(const DenoiserInput& in) {
    check_denoiser_input(*this, in);
    Tape tape;
    int out = model_.forward(tape, pack_input_tensor(*in.x_t, in.condition), {in.t});
    return tensor_to_field(tape.value(out));
}

} // namespace voxdiff
