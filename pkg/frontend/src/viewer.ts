// WebGL2 portal renderer. Implements the same compositing contract as the
// CPU reference in softrender.ts: per-mesh nearest-surface depth (MIN-blend
// prepass), depth-tolerant weighted accumulation, nearest-surface fallback
// where no weighted mesh covers, then a stencil-masked "window" resolve with
// an optional red/cyan anaglyph mode.

import type { LoadedBundle } from "./bundle.js";
import { blendWeights, clampEye, headVolumeOf, Vec3 } from "./geomath.js";
import { buildMesh, ViewMesh } from "./mesh.js";

const BIG_DEPTH = 1e30;

const MESH_VS = `#version 300 es
precision highp float;
in vec3 aPos;
in float aIntensity;
uniform vec3 uEye;
uniform float uFocal, uCx, uCy, uW, uH;
out float vDepth;
out float vIntensity;
void main() {
  vec3 c = aPos - uEye;       // viewer looks straight down -z
  float depth = -c.z;
  vDepth = depth;
  vIntensity = aIntensity;
  float u = uCx + uFocal * c.x / depth;
  float v = uCy - uFocal * c.y / depth;
  float ndcX = (u + 0.5) * 2.0 / uW - 1.0;
  float ndcY = 1.0 - (v + 0.5) * 2.0 / uH;
  // w = depth keeps perspective-correct interpolation of the attributes
  gl_Position = vec4(ndcX * depth, ndcY * depth, 0.0, depth);
}`;

const DEPTH_FS = `#version 300 es
precision highp float;
in float vDepth;
in float vIntensity;
out vec4 frag;
void main() {
  if (vDepth <= 0.0) discard;
  frag = vec4(vDepth, 0.0, 0.0, 1.0);
}`;

const ACCUM_FS = `#version 300 es
precision highp float;
in float vDepth;
in float vIntensity;
uniform sampler2D uMinDepth;
uniform float uTol;
uniform float uWeight;
uniform vec2 uViewport;
out vec4 frag;
void main() {
  if (vDepth <= 0.0) discard;
  float dmin = texture(uMinDepth, gl_FragCoord.xy / uViewport).r;
  if (vDepth > dmin * (1.0 + uTol)) discard;
  frag = vec4(uWeight * vIntensity, uWeight, 0.0, 1.0);
}`;

const FALLBACK_FS = `#version 300 es
precision highp float;
in float vDepth;
in float vIntensity;
uniform sampler2D uMinWeighted;
uniform sampler2D uMinAll;
uniform vec2 uViewport;
out vec4 frag;
void main() {
  if (vDepth <= 0.0) discard;
  vec2 uv = gl_FragCoord.xy / uViewport;
  if (texture(uMinWeighted, uv).r < ${BIG_DEPTH * 0.5}) discard;
  float dmin = texture(uMinAll, uv).r;
  if (vDepth > dmin * 1.0005) discard;
  frag = vec4(vIntensity, 1.0, 0.0, 1.0);
}`;

const QUAD_VS = `#version 300 es
precision highp float;
in vec2 aPos;
out vec2 vUv;
void main() {
  vUv = aPos * 0.5 + 0.5;
  gl_Position = vec4(aPos, 0.0, 1.0);
}`;

const RESOLVE_FS = `#version 300 es
precision highp float;
in vec2 vUv;
uniform sampler2D uAcc;
uniform sampler2D uFallback;
uniform sampler2D uAccRight;
uniform sampler2D uFallbackRight;
uniform int uAnaglyph;
out vec4 frag;
float shade(sampler2D acc, sampler2D fb, vec2 uv) {
  vec4 a = texture(acc, uv);
  if (a.g > 0.0) return clamp(a.r / a.g, 0.0, 1.0);
  vec4 f = texture(fb, uv);
  if (f.g > 0.0) return clamp(f.r / f.g, 0.0, 1.0);
  return 0.0;
}
void main() {
  float left = shade(uAcc, uFallback, vUv);
  if (uAnaglyph == 0) {
    frag = vec4(vec3(left), 1.0);
  } else {
    float right = shade(uAccRight, uFallbackRight, vUv);
    frag = vec4(left, right, right, 1.0);
  }
}`;

function compile(gl: WebGL2RenderingContext, vsSrc: string, fsSrc: string): WebGLProgram {
  const mk = (type: number, src: string) => {
    const sh = gl.createShader(type)!;
    gl.shaderSource(sh, src);
    gl.compileShader(sh);
    if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
      throw new Error(`shader: ${gl.getShaderInfoLog(sh)}`);
    }
    return sh;
  };
  const prog = gl.createProgram()!;
  gl.attachShader(prog, mk(gl.VERTEX_SHADER, vsSrc));
  gl.attachShader(prog, mk(gl.FRAGMENT_SHADER, fsSrc));
  gl.linkProgram(prog);
  if (!gl.getProgramParameter(prog, gl.LINK_STATUS)) {
    throw new Error(`program: ${gl.getProgramInfoLog(prog)}`);
  }
  return prog;
}

interface GpuMesh {
  vao: WebGLVertexArrayObject;
  count: number;
}

export class PortalViewer {
  readonly width: number;
  readonly height: number;
  anaglyph = false;
  private gl: WebGL2RenderingContext;
  private bundle: LoadedBundle;
  private meshes: GpuMesh[];
  private progDepth: WebGLProgram;
  private progAccum: WebGLProgram;
  private progFallback: WebGLProgram;
  private progResolve: WebGLProgram;
  private quad: WebGLVertexArrayObject;
  private texMinW: WebGLTexture;
  private texMinAll: WebGLTexture;
  private texAcc: [WebGLTexture, WebGLTexture];
  private texFb: [WebGLTexture, WebGLTexture];
  private fbo: WebGLFramebuffer;

  constructor(canvas: HTMLCanvasElement, bundle: LoadedBundle) {
    const gl = canvas.getContext("webgl2", { stencil: true, antialias: false });
    if (!gl) throw new Error("WebGL2 is unavailable");
    if (!gl.getExtension("EXT_color_buffer_float")) {
      throw new Error("float render targets are unavailable");
    }
    gl.getExtension("EXT_float_blend");
    this.gl = gl;
    this.bundle = bundle;
    const ref = bundle.manifest.rig.views[0];
    this.width = ref.width;
    this.height = ref.height;
    canvas.width = this.width;
    canvas.height = this.height;

    const threshold = bundle.manifest.render_params.triangle_threshold;
    this.meshes = bundle.gds.map((gd, i) =>
      this.upload(buildMesh(gd, bundle.manifest.rig.views[i], threshold)));

    this.progDepth = compile(gl, MESH_VS, DEPTH_FS);
    this.progAccum = compile(gl, MESH_VS, ACCUM_FS);
    this.progFallback = compile(gl, MESH_VS, FALLBACK_FS);
    this.progResolve = compile(gl, QUAD_VS, RESOLVE_FS);

    const mkTex = () => {
      const t = gl.createTexture()!;
      gl.bindTexture(gl.TEXTURE_2D, t);
      gl.texStorage2D(gl.TEXTURE_2D, 1, gl.RGBA32F, this.width, this.height);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
      return t;
    };
    this.texMinW = mkTex();
    this.texMinAll = mkTex();
    this.texAcc = [mkTex(), mkTex()];
    this.texFb = [mkTex(), mkTex()];
    this.fbo = gl.createFramebuffer()!;

    const quad = gl.createVertexArray()!;
    gl.bindVertexArray(quad);
    const qb = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, qb);
    gl.bufferData(gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 3, -1, -1, 3]), gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    this.quad = quad;
  }

  private upload(mesh: ViewMesh): GpuMesh {
    const gl = this.gl;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);
    const pb = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, pb);
    gl.bufferData(gl.ARRAY_BUFFER, mesh.positions, gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 0, 0);
    const ib = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, ib);
    gl.bufferData(gl.ARRAY_BUFFER, mesh.intensities, gl.STATIC_DRAW);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 1, gl.FLOAT, false, 0, 0);
    const eb = gl.createBuffer()!;
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, eb);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, mesh.indices, gl.STATIC_DRAW);
    gl.bindVertexArray(null);
    return { vao, count: mesh.indices.length };
  }

  private setViewUniforms(prog: WebGLProgram, eye: Vec3): void {
    const gl = this.gl;
    const ref = this.bundle.manifest.rig.views[0];
    gl.uniform3f(gl.getUniformLocation(prog, "uEye"), eye[0], eye[1], eye[2]);
    gl.uniform1f(gl.getUniformLocation(prog, "uFocal"), ref.focal);
    gl.uniform1f(gl.getUniformLocation(prog, "uCx"), ref.principal[0]);
    gl.uniform1f(gl.getUniformLocation(prog, "uCy"), ref.principal[1]);
    gl.uniform1f(gl.getUniformLocation(prog, "uW"), this.width);
    gl.uniform1f(gl.getUniformLocation(prog, "uH"), this.height);
  }

  private target(tex: WebGLTexture, clear: [number, number, number, number]): void {
    const gl = this.gl;
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.fbo);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0,
      gl.TEXTURE_2D, tex, 0);
    gl.viewport(0, 0, this.width, this.height);
    gl.clearColor(...clear);
    gl.clear(gl.COLOR_BUFFER_BIT);
  }

  /** Render one eye into the (acc, fallback) texture pair. */
  private renderEye(eye: Vec3, acc: WebGLTexture, fb: WebGLTexture): void {
    const gl = this.gl;
    const m = this.bundle.manifest;
    const weights = blendWeights(eye[0], eye[1], m.rig.r_w, m.rig.r_h);
    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);

    // nearest weighted surface, then nearest of everything
    gl.blendEquation(gl.MIN);
    gl.blendFunc(gl.ONE, gl.ONE);
    gl.useProgram(this.progDepth);
    this.setViewUniforms(this.progDepth, eye);
    this.target(this.texMinW, [BIG_DEPTH, 0, 0, 0]);
    this.meshes.forEach((mesh, i) => {
      if (weights[i] <= 0) return;
      gl.bindVertexArray(mesh.vao);
      gl.drawElements(gl.TRIANGLES, mesh.count, gl.UNSIGNED_INT, 0);
    });
    this.target(this.texMinAll, [BIG_DEPTH, 0, 0, 0]);
    this.meshes.forEach((mesh) => {
      gl.bindVertexArray(mesh.vao);
      gl.drawElements(gl.TRIANGLES, mesh.count, gl.UNSIGNED_INT, 0);
    });

    // weighted accumulation within the depth tolerance
    gl.blendEquation(gl.FUNC_ADD);
    gl.blendFunc(gl.ONE, gl.ONE);
    gl.useProgram(this.progAccum);
    this.setViewUniforms(this.progAccum, eye);
    gl.uniform1f(gl.getUniformLocation(this.progAccum, "uTol"),
      m.render_params.depth_tolerance);
    gl.uniform2f(gl.getUniformLocation(this.progAccum, "uViewport"),
      this.width, this.height);
    gl.uniform1i(gl.getUniformLocation(this.progAccum, "uMinDepth"), 0);
    gl.activeTexture(gl.TEXTURE0);
    gl.bindTexture(gl.TEXTURE_2D, this.texMinW);
    this.target(acc, [0, 0, 0, 0]);
    this.meshes.forEach((mesh, i) => {
      if (weights[i] <= 0) return;
      gl.uniform1f(gl.getUniformLocation(this.progAccum, "uWeight"), weights[i]);
      gl.bindVertexArray(mesh.vao);
      gl.drawElements(gl.TRIANGLES, mesh.count, gl.UNSIGNED_INT, 0);
    });

    // fallback where no weighted mesh covered the pixel
    gl.useProgram(this.progFallback);
    this.setViewUniforms(this.progFallback, eye);
    gl.uniform2f(gl.getUniformLocation(this.progFallback, "uViewport"),
      this.width, this.height);
    gl.uniform1i(gl.getUniformLocation(this.progFallback, "uMinWeighted"), 0);
    gl.uniform1i(gl.getUniformLocation(this.progFallback, "uMinAll"), 1);
    gl.activeTexture(gl.TEXTURE1);
    gl.bindTexture(gl.TEXTURE_2D, this.texMinAll);
    gl.activeTexture(gl.TEXTURE0);
    gl.bindTexture(gl.TEXTURE_2D, this.texMinW);
    this.target(fb, [0, 0, 0, 0]);
    this.meshes.forEach((mesh) => {
      gl.bindVertexArray(mesh.vao);
      gl.drawElements(gl.TRIANGLES, mesh.count, gl.UNSIGNED_INT, 0);
    });
    gl.disable(gl.BLEND);
  }

  /** Draw a frame: mono at the eye, or red/cyan at eye +- r_w/8 along x. */
  draw(eyeIn: Vec3): void {
    const gl = this.gl;
    const m = this.bundle.manifest;
    const eye = clampEye(eyeIn, headVolumeOf(m));
    if (this.anaglyph) {
      const half = m.rig.r_w / 8;
      this.renderEye([eye[0] - half, eye[1], eye[2]],
        this.texAcc[0], this.texFb[0]);
      this.renderEye([eye[0] + half, eye[1], eye[2]],
        this.texAcc[1], this.texFb[1]);
    } else {
      this.renderEye(eye, this.texAcc[0], this.texFb[0]);
    }

    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    gl.viewport(0, 0, this.width, this.height);
    gl.clearColor(0.08, 0.07, 0.06, 1.0);
    gl.clearStencil(0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.STENCIL_BUFFER_BIT);

    // portal: scene shows only through the window cutout
    gl.enable(gl.STENCIL_TEST);
    gl.stencilFunc(gl.ALWAYS, 1, 0xff);
    gl.stencilOp(gl.KEEP, gl.KEEP, gl.REPLACE);
    gl.colorMask(false, false, false, false);
    gl.useProgram(this.progResolve);
    gl.bindVertexArray(this.quad);
    const inset = 0.86;
    gl.bindBuffer(gl.ARRAY_BUFFER, gl.getParameter(gl.ARRAY_BUFFER_BINDING));
    // reuse the fullscreen triangle scaled down as the window mask
    const maskBuf = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, maskBuf);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([
      -inset, -inset, inset, -inset, inset, inset,
      -inset, -inset, inset, inset, -inset, inset,
    ]), gl.STREAM_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.drawArrays(gl.TRIANGLES, 0, 6);
    gl.deleteBuffer(maskBuf);

    gl.colorMask(true, true, true, true);
    gl.stencilFunc(gl.EQUAL, 1, 0xff);
    gl.stencilOp(gl.KEEP, gl.KEEP, gl.KEEP);
    gl.bindVertexArray(this.quad);
    const qb = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, qb);
    gl.bufferData(gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 3, -1, -1, 3]), gl.STREAM_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.uniform1i(gl.getUniformLocation(this.progResolve, "uAcc"), 0);
    gl.uniform1i(gl.getUniformLocation(this.progResolve, "uFallback"), 1);
    gl.uniform1i(gl.getUniformLocation(this.progResolve, "uAccRight"), 2);
    gl.uniform1i(gl.getUniformLocation(this.progResolve, "uFallbackRight"), 3);
    gl.uniform1i(gl.getUniformLocation(this.progResolve, "uAnaglyph"),
      this.anaglyph ? 1 : 0);
    [this.texAcc[0], this.texFb[0], this.texAcc[1], this.texFb[1]]
      .forEach((t, i) => {
        gl.activeTexture(gl.TEXTURE0 + i);
        gl.bindTexture(gl.TEXTURE_2D, t);
      });
    gl.drawArrays(gl.TRIANGLES, 0, 3);
    gl.deleteBuffer(qb);
    gl.disable(gl.STENCIL_TEST);
  }
}
