// Exercises the shared-library surface only: estm.h, no core headers.
#include <doctest.h>

#include <estm.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace {

std::string temp_path(const std::string & name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

estm_toy_spec tiny_spec() {
    return estm_toy_spec{1, 16, 2, 3, 8, 16};
}

} // namespace

TEST_SUITE_BEGIN("capi");

TEST_CASE("version and error strings are always available") {
    CHECK(estm_version() != nullptr);
    CHECK(estm_last_error() != nullptr);
}

TEST_CASE("toy model create, write, read, introspect") {
    const auto spec = tiny_spec();
    estm_container * model = nullptr;
    REQUIRE(estm_toy_model_create(&spec, 7, 1.0f, &model) == ESTM_OK);

    uint64_t payload = 0;
    CHECK(estm_container_payload_bytes(model, &payload) == ESTM_OK);
    CHECK(payload > 0);

    int64_t count = 0;
    CHECK(estm_container_tensor_count(model, &count) == ESTM_OK);
    CHECK(count > 10);

    char    name[128];
    int32_t bits = -1;
    int64_t nbytes = 0;
    CHECK(estm_container_tensor_info(model, 0, name, sizeof(name), &bits, &nbytes) == ESTM_OK);
    CHECK(bits == 0); // f32
    CHECK(nbytes > 0);
    CHECK(estm_container_tensor_info(model, count, nullptr, 0, &bits, nullptr) ==
          ESTM_ERR_INVALID_ARG);

    size_t len = 0;
    CHECK(estm_container_metadata(model, "arch.n_layers", nullptr, 0, &len) == ESTM_OK);
    std::string layers(len, '\0');
    CHECK(estm_container_metadata(model, "arch.n_layers", layers.data(), len + 1, &len) ==
          ESTM_OK);
    CHECK(layers == "1");
    CHECK(estm_container_metadata(model, "no.such.key", nullptr, 0, &len) == ESTM_ERR_FORMAT);

    const std::string path = temp_path("estm_capi_model.estm");
    CHECK(estm_container_write(model, path.c_str()) == ESTM_OK);

    estm_container * back = nullptr;
    REQUIRE(estm_container_read(path.c_str(), &back) == ESTM_OK);
    uint64_t payload2 = 0;
    CHECK(estm_container_payload_bytes(back, &payload2) == ESTM_OK);
    CHECK(payload2 == payload);

    estm_container_free(back);
    estm_container_free(model);
    std::remove(path.c_str());
}

TEST_CASE("io errors carry status codes and messages") {
    estm_container * c = nullptr;
    CHECK(estm_container_read("/nonexistent/model.estm", &c) == ESTM_ERR_IO);
    CHECK(std::strlen(estm_last_error()) > 0);

    const std::string junk = temp_path("estm_capi_junk.estm");
    {
        FILE * f = std::fopen(junk.c_str(), "wb");
        REQUIRE(f);
        std::fputs("definitely not a container", f);
        std::fclose(f);
    }
    CHECK(estm_container_read(junk.c_str(), &c) == ESTM_ERR_FORMAT);
    std::remove(junk.c_str());

    CHECK(estm_container_read(nullptr, &c) == ESTM_ERR_INVALID_ARG);
}

TEST_CASE("quantization through the C API") {
    const auto spec = tiny_spec();
    estm_container * model = nullptr;
    REQUIRE(estm_toy_model_create(&spec, 7, 1.0f, &model) == ESTM_OK);

    estm_quant_options opts{};
    opts.bits   = 4;
    opts.scheme = ESTM_QUANT_KQUANT;

    estm_container * q4 = nullptr;
    REQUIRE(estm_quantize_model(model, &opts, nullptr, &q4) == ESTM_OK);
    uint64_t before = 0, after = 0;
    CHECK(estm_container_payload_bytes(model, &before) == ESTM_OK);
    CHECK(estm_container_payload_bytes(q4, &after) == ESTM_OK);
    CHECK(after < before);

    // mixed policy keeps attention projections at int8
    estm_policy * policy = nullptr;
    REQUIRE(estm_policy_parse("enc.*.attn.*.w 8\ndefault 4\n", &policy) == ESTM_OK);
    estm_container * mixed = nullptr;
    REQUIRE(estm_quantize_model(model, &opts, policy, &mixed) == ESTM_OK);
    uint64_t mixed_bytes = 0;
    CHECK(estm_container_payload_bytes(mixed, &mixed_bytes) == ESTM_OK);
    CHECK(mixed_bytes > after);
    CHECK(mixed_bytes < before);
    estm_policy_free(policy);

    CHECK(estm_policy_parse("enc.* 5\n", &policy) == ESTM_ERR_FORMAT);

    estm_quant_options bad = opts;
    bad.bits               = 3;
    estm_container * nope  = nullptr;
    CHECK(estm_quantize_model(model, &bad, nullptr, &nope) == ESTM_ERR_INVALID_ARG);

    estm_container_free(mixed);
    estm_container_free(q4);
    estm_container_free(model);
}

TEST_CASE("streaming session lifecycle") {
    const auto spec = tiny_spec();
    estm_container * model = nullptr;
    REQUIRE(estm_toy_model_create(&spec, 11, 1.0f, &model) == ESTM_OK);

    estm_stream_config cfg{};
    REQUIRE(estm_stream_config_parse("1,2,1", &cfg) == ESTM_OK);
    double  delay = 0.0, history = 0.0;
    int32_t fpc = 0;
    CHECK(estm_stream_config_derive(&cfg, &delay, &history, &fpc) == ESTM_OK);
    CHECK(delay == doctest::Approx(0.08));
    CHECK(history == doctest::Approx(0.16));
    CHECK(fpc == 8);
    CHECK(estm_stream_config_parse("1,2,3", &cfg) == ESTM_ERR_INVALID_ARG);
    REQUIRE(estm_stream_config_parse("1,2,1", &cfg) == ESTM_OK);

    estm_session * session = nullptr;
    REQUIRE(estm_session_create(model, &cfg, nullptr, &session) == ESTM_OK);

    std::vector<float> audio(1280 * 3);
    for (size_t i = 0; i < audio.size(); ++i) {
        audio[i] = 0.3f * static_cast<float>(std::sin(0.05 * static_cast<double>(i)));
    }
    CHECK(estm_session_push(session, audio.data(), static_cast<int64_t>(audio.size())) ==
          ESTM_OK);
    CHECK(estm_session_finish(session) == ESTM_OK);

    double audio_s = 0.0;
    CHECK(estm_session_audio_seconds(session, &audio_s) == ESTM_OK);
    CHECK(audio_s == doctest::Approx(0.24));

    int64_t chunks = 0;
    CHECK(estm_session_chunk_count(session, &chunks) == ESTM_OK);
    CHECK(chunks == 3);
    std::vector<double> secs(static_cast<size_t>(chunks));
    CHECK(estm_session_chunk_seconds(session, secs.data(), chunks) == ESTM_OK);
    for (double s : secs) {
        CHECK(s > 0.0);
    }

    int64_t n_tokens = 0;
    CHECK(estm_session_token_count(session, &n_tokens) == ESTM_OK);
    std::vector<int32_t> tokens(static_cast<size_t>(n_tokens));
    CHECK(estm_session_tokens(session, tokens.data(), n_tokens) == ESTM_OK);
    for (int32_t t : tokens) {
        CHECK(t >= 0);
        CHECK(t < spec.vocab_size);
    }

    size_t text_len = 0;
    CHECK(estm_session_text(session, nullptr, 0, &text_len) == ESTM_OK);
    std::string text(text_len, '\0');
    CHECK(estm_session_text(session, text.data(), text_len + 1, &text_len) == ESTM_OK);

    // pushing after finish is a runtime error; reset clears it
    CHECK(estm_session_push(session, audio.data(), 1280) == ESTM_ERR_RUNTIME);
    CHECK(estm_session_reset(session) == ESTM_OK);
    CHECK(estm_session_push(session, audio.data(), static_cast<int64_t>(audio.size())) ==
          ESTM_OK);
    CHECK(estm_session_finish(session) == ESTM_OK);
    int64_t again = 0;
    CHECK(estm_session_token_count(session, &again) == ESTM_OK);
    CHECK(again == n_tokens); // deterministic replay

    estm_session_free(session);
    estm_container_free(model);
}

TEST_CASE("wav io round-trips through the C surface") {
    const std::string path = temp_path("estm_capi.wav");
    std::vector<float> samples(1600);
    for (size_t i = 0; i < samples.size(); ++i) {
        samples[i] = 0.25f * static_cast<float>(std::sin(0.02 * static_cast<double>(i)));
    }
    REQUIRE(estm_wav_write(path.c_str(), samples.data(), static_cast<int64_t>(samples.size()),
                           16000) == ESTM_OK);

    float * back = nullptr;
    int64_t count = 0;
    int32_t rate  = 0;
    REQUIRE(estm_wav_read(path.c_str(), &back, &count, &rate) == ESTM_OK);
    CHECK(rate == 16000);
    CHECK(count == static_cast<int64_t>(samples.size()));
    estm_buffer_free(back);
    std::remove(path.c_str());
}

TEST_CASE("metric helpers") {
    estm_wer_breakdown b{};
    REQUIRE(estm_wer("the cat sat", "the cat", &b) == ESTM_OK);
    CHECK(b.deletions == 1);
    CHECK(b.ref_words == 3);
    CHECK(b.wer == doctest::Approx(1.0 / 3.0));
    CHECK(estm_wer("", "x", &b) == ESTM_ERR_INVALID_ARG);

    double v = 0.0;
    CHECK(estm_rtfx(10.0, 2.0, &v) == ESTM_OK);
    CHECK(v == doctest::Approx(5.0));
    CHECK(estm_bsf(7.28, 7.07, &v) == ESTM_OK);
    CHECK(v == doctest::Approx(1.03).epsilon(0.005));
    CHECK(estm_effective_latency(0.56, 7.20, &v) == ESTM_OK);
    CHECK(v == doctest::Approx(0.638).epsilon(0.002));
    CHECK(estm_rtfx(-1.0, 2.0, &v) == ESTM_ERR_INVALID_ARG);
}

TEST_CASE("report rendering") {
    estm_wer_breakdown b{};
    b.ref_words     = 10000;
    b.substitutions = 728;
    b.wer           = 0.0728;
    estm_dataset_wer rows[2] = {{"dev", b}, {"test", b}};

    double avg = 0.0;
    REQUIRE(estm_report_average(rows, 2, &avg) == ESTM_OK);
    CHECK(avg == doctest::Approx(0.0728));

    const double baseline = 0.0707;
    size_t len = 0;
    REQUIRE(estm_report_render(rows, 2, nullptr, &baseline, 42, "7,10,7", 0, nullptr, 0, &len) ==
            ESTM_OK);
    std::string text(len, '\0');
    REQUIRE(estm_report_render(rows, 2, nullptr, &baseline, 42, "7,10,7", 0, text.data(),
                               len + 1, &len) == ESTM_OK);
    CHECK(text.find("dev") != std::string::npos);
    CHECK(text.find("bsf 1.0297") != std::string::npos);

    REQUIRE(estm_report_render(rows, 2, nullptr, nullptr, 0, nullptr, 1, nullptr, 0, &len) ==
            ESTM_OK);
    std::string csv(len, '\0');
    REQUIRE(estm_report_render(rows, 2, nullptr, nullptr, 0, nullptr, 1, csv.data(), len + 1,
                               &len) == ESTM_OK);
    CHECK(csv.rfind("dataset,", 0) == 0);
}

TEST_SUITE_END();
